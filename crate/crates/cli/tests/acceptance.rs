//! Acceptance suite. Every check prints one `PASS`/`FAIL` line; the process
//! exits non-zero when any check fails. Oracles here are written from the
//! definitions and share no code with the library.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiral_core::agents::{synthetic_rate, AgentContext, AgentError, RatingAgent, SyntheticAgent};
use spiral_core::aggregation::{climate, histogram, WeightRule};
use spiral_core::analysis::{
    analyze_run, case_series, match_vs_distance, semantic_match, AnalysisOptions, IdfTable,
};
use spiral_core::files::{load_record, write_jsonl};
use spiral_core::metrics::{
    excess_kurtosis, iqr, mann_kendall, spearman_corr, MetricError, MetricReport,
};
use spiral_core::simulation::{audit_record, run_experiment, RunRecord};
use spiral_core::{
    derive_seed, MovieItem, Persona, RatingScale, RatingValue, Scenario, ScenarioConfig,
    SyntheticPolicy,
};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- oracles --------------------------------------------------------------

fn brute_force_s(x: &[f64]) -> i64 {
    let mut s = 0i64;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            s += match x[j].partial_cmp(&x[i]).unwrap() {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    s
}

/// Average rank by counting: rank = #less + (#equal + 1) / 2.
fn counting_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

fn d_squared_rho(x: &[f64], y: &[f64]) -> f64 {
    let rx = counting_ranks(x);
    let ry = counting_ranks(y);
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

fn kurtosis_oracle(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}

/// k-th order statistic (0-based) by counting, without sorting.
fn order_stat(x: &[f64], k: usize) -> f64 {
    *x.iter()
        .find(|&&v| {
            let less = x.iter().filter(|&&w| w < v).count();
            let le = x.iter().filter(|&&w| w <= v).count();
            less <= k && k < le
        })
        .unwrap()
}

/// Linear interpolation between order statistics at position q(n-1).
fn quantile_oracle(x: &[f64], q: f64) -> f64 {
    let h = q * (x.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let a = order_stat(x, lo);
    let b = order_stat(x, hi);
    a + (h - lo as f64) * (b - a)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---- corpus ---------------------------------------------------------------

fn movies(n: usize) -> Vec<MovieItem> {
    (0..n)
        .map(|i| MovieItem {
            movie_id: format!("tt{:07}", 100 + i),
            title: format!("Feature {i}"),
            genres: vec!["Drama".into()],
            overview: format!("Story number {i} about a town and its people."),
            release_date: "2012-06-15".into(),
            external_avg: None,
        })
        .collect()
}

fn personas(n: usize) -> Vec<Persona> {
    (0..n)
        .map(|i| Persona {
            persona_id: format!("persona_{i:03}"),
            description: format!("Viewer {i}, a teacher who watches films on weekends."),
        })
        .collect()
}

fn scenario_cfg(scenario: Scenario, policy: SyntheticPolicy, seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        population_n: 100,
        warmup_m: 10,
        late_window_l: 30,
        master_seed: seed,
        backend_id: format!("synthetic:{}", policy.kind.as_str()),
        synthetic: Some(policy),
        jobs: 4,
        ..ScenarioConfig::default()
    };
    cfg.set_scenario(scenario);
    cfg
}

fn run_synthetic(cfg: &ScenarioConfig, n_movies: usize) -> RunRecord {
    let agent = SyntheticAgent::new(cfg.synthetic_policy().unwrap());
    let record = run_experiment(cfg, &movies(n_movies), &personas(100), &agent).unwrap();
    assert!(record.is_complete(), "failures: {:?}", record.failures);
    record
}

fn s_bound(r: &MetricReport) -> f64 {
    let n = r.n_trend as f64;
    0.05 * n * (n - 1.0) / 2.0
}

// ---- checks ---------------------------------------------------------------

fn mann_kendall_matches_brute_force() -> Outcome {
    let mut g = rng(1);
    let mut series = Vec::with_capacity(1000);
    for i in 0..1000 {
        let n = g.random_range(2..=50);
        let x: Vec<f64> = if i % 3 == 0 {
            (0..n).map(|_| g.random_range(0..4) as f64 / 4.0).collect()
        } else {
            // cumulative majority share of a random polarity stream
            let p: f64 = g.random();
            let start = g.random_range(1..=10);
            let mut pos = 0u32;
            let mut out = Vec::new();
            for k in 1..start + n {
                pos += u32::from(g.random::<f64>() < p);
                if k >= start {
                    let share = pos as f64 / k as f64;
                    out.push(share.max(1.0 - share));
                }
            }
            out
        };
        series.push(x);
    }
    let t0 = Instant::now();
    let mut mismatches = 0;
    for x in &series {
        if mann_kendall(x).unwrap().s != brute_force_s(x) {
            mismatches += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(
        mismatches == 0 && secs < 5.0,
        format!("1000 series, {mismatches} mismatches, {secs:.3} s"),
    )
}

fn spearman_matches_oracles() -> Outcome {
    let mut g = rng(2);
    let mut worst_free = 0.0f64;
    let mut worst_tied = 0.0f64;
    for _ in 0..1000 {
        let n = g.random_range(3..=60);
        let mut a: Vec<f64> = (0..n).map(|i| i as f64 + g.random::<f64>() * 0.5).collect();
        let mut b = a.clone();
        a.shuffle(&mut g);
        b.shuffle(&mut g);
        worst_free = worst_free.max((spearman_corr(&a, &b).unwrap() - d_squared_rho(&a, &b)).abs());

        let x: Vec<f64> = (0..n).map(|_| g.random_range(1..=5) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| g.random_range(1..=4) as f64 / 2.0).collect();
        match spearman_corr(&x, &y) {
            Ok(rho) => {
                worst_tied =
                    worst_tied.max((rho - pearson(&counting_ranks(&x), &counting_ranks(&y))).abs())
            }
            Err(MetricError::ConstantSeries) => {}
            Err(e) => return Err(format!("tied series: {e}")),
        }
    }
    let mut monotone_ok = true;
    for _ in 0..200 {
        let n = g.random_range(2..=60);
        let mut acc = 0.0;
        let x: Vec<f64> = (0..n)
            .map(|_| {
                acc += g.random::<f64>() + 1e-3;
                acc
            })
            .collect();
        let up: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let down: Vec<f64> = x.iter().map(|v| -v * v * v).collect();
        monotone_ok &= spearman_corr(&x, &up).unwrap() == 1.0;
        monotone_ok &= spearman_corr(&x, &down).unwrap() == -1.0;
    }
    ensure(
        worst_free <= 1e-12 && worst_tied <= 1e-12 && monotone_ok,
        format!("max |diff| tie-free {worst_free:.1e}, tied {worst_tied:.1e}; monotone exact: {monotone_ok}"),
    )
}

fn concentration_matches_oracles() -> Outcome {
    let mut exact = true;
    for a in 1..=10 {
        for b in a + 1..=10 {
            let v = [a as f64, a as f64, b as f64, b as f64];
            exact &= excess_kurtosis(&v).unwrap() == -2.0;
        }
    }
    let mut g = rng(3);
    let mut worst_k = 0.0f64;
    let mut worst_iqr = 0.0f64;
    for i in 0..1000 {
        let w: Vec<f64> = (0..30)
            .map(|_| {
                if i % 2 == 0 {
                    g.random_range(1.0..10.0)
                } else {
                    g.random_range(3..=30) as f64 / 3.0
                }
            })
            .collect();
        match excess_kurtosis(&w) {
            Ok(k) => worst_k = worst_k.max((k - kurtosis_oracle(&w)).abs()),
            Err(e) => return Err(format!("window {i}: {e}")),
        }
        let want = quantile_oracle(&w, 0.75) - quantile_oracle(&w, 0.25);
        worst_iqr = worst_iqr.max((iqr(&w).unwrap() - want).abs());
    }
    let mut constant_ok = true;
    for v in [1.0, 6.0, 22.0 / 3.0, 10.0] {
        let w = vec![v; 30];
        constant_ok &= matches!(excess_kurtosis(&w), Err(MetricError::ZeroVariance));
        constant_ok &= iqr(&w).unwrap() == 0.0;
    }
    ensure(
        exact && worst_k <= 1e-10 && worst_iqr <= 1e-10 && constant_ok,
        format!(
            "{{a,a,b,b}} exact: {exact}; max |diff| kurtosis {worst_k:.1e}, IQR {worst_iqr:.1e}; constant windows: {constant_ok}"
        ),
    )
}

fn aggregation_is_correct() -> Outcome {
    let scale = RatingScale::DEFAULT;
    let mut g = rng(4);
    let mut worst_mean = 0.0f64;
    let mut worst_scale = 0.0f64;
    let mut worst_mass = 0.0f64;
    for i in 0..1000 {
        let n = g.random_range(1..=100);
        let raw: Vec<f64> = (0..n)
            .map(|_| {
                if i % 2 == 0 {
                    g.random_range(1..=10) as f64
                } else {
                    g.random_range(3..=30) as f64 / 3.0
                }
            })
            .collect();
        let history: Vec<RatingValue> = raw
            .iter()
            .map(|&r| RatingValue::new(r, scale).unwrap())
            .collect();
        let binned_mean = raw.iter().map(|r| (r + 0.5).floor()).sum::<f64>() / n as f64;
        let c = climate(&history, scale, &WeightRule::Uniform).unwrap();
        worst_mean = worst_mean.max((c - binned_mean).abs());

        let w: Vec<f64> = (0..n).map(|_| g.random_range(0.01..10.0)).collect();
        let k = 10f64.powf(g.random_range(-3.0..3.0));
        let scaled: Vec<f64> = w.iter().map(|x| x * k).collect();
        let h1 = histogram(&history, scale, &WeightRule::Custom(w)).unwrap();
        let h2 = histogram(&history, scale, &WeightRule::Custom(scaled)).unwrap();
        worst_scale = worst_scale.max((h1.climate() - h2.climate()).abs());
        for level in 1..=10 {
            worst_scale = worst_scale.max((h1.at(level) - h2.at(level)).abs());
        }
        let hu = histogram(&history, scale, &WeightRule::Uniform).unwrap();
        for h in [&h1, &hu] {
            let total: f64 = (1..=10).map(|l| h.at(l)).sum();
            worst_mass = worst_mass.max((total - 1.0).abs());
        }
    }
    ensure(
        worst_mean <= 1e-12 && worst_scale <= 1e-12 && worst_mass <= 1e-9,
        format!("max |diff| uniform-vs-mean {worst_mean:.1e}, weight scaling {worst_scale:.1e}, mass sum {worst_mass:.1e}"),
    )
}

fn scenario_one_consensus() -> Outcome {
    let cfg = scenario_cfg(
        Scenario::I,
        SyntheticPolicy::conformist(8.0, 3.0, 0.8, 0.5),
        2024,
    );
    let t0 = Instant::now();
    let record = run_synthetic(&cfg, 50);
    let reports = analyze_run(&record, AnalysisOptions::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();

    let mut serial = cfg.clone();
    serial.jobs = 1;
    let again = run_synthetic(&serial, 50);
    let deterministic = again.movie_sequences == record.movie_sequences
        && again.agent_order_per_movie == record.agent_order_per_movie
        && again.persona_assignment == record.persona_assignment;

    let rising = reports
        .iter()
        .filter(|r| r.spearman_rho.is_some_and(|p| p >= 0.5))
        .count();
    let share = rising as f64 / reports.len() as f64;
    let med_iqr = median(reports.iter().map(|r| r.iqr_late).collect());
    ensure(
        share >= 0.8 && med_iqr <= 1.0 && deterministic && secs < 30.0,
        format!(
            "rho >= 0.5 in {rising}/50 movies, median late IQR {med_iqr:.3}, deterministic {deterministic}, {secs:.2} s"
        ),
    )
}

fn scenario_two_anchoring() -> Outcome {
    let cfg = scenario_cfg(
        Scenario::II,
        SyntheticPolicy::conformist(8.0, 0.0, 1.0, 0.0),
        2025,
    );
    assert!(cfg.warmup_visible_to_agents);
    let record = run_synthetic(&cfg, 50);

    let included = analyze_run(&record, AnalysisOptions::default()).unwrap();
    let worst_included = included
        .iter()
        .map(|r| r.mann_kendall_s.abs() as f64 / r.max_abs_s() as f64)
        .fold(0.0, f64::max);
    println!(
        "INFO  scenario_two_anchoring: with warm-ups in the cumulative shares, max |S| / (n(n-1)/2) = {worst_included:.3}"
    );

    let reports = analyze_run(
        &record,
        AnalysisOptions {
            exclude_warmups: true,
        },
    )
    .unwrap();
    let bad: Vec<&str> = reports
        .iter()
        .filter(|r| !(r.iqr_late <= 0.5 && (r.mann_kendall_s.abs() as f64) <= s_bound(r)))
        .map(|r| r.movie_id.as_str())
        .collect();
    let max_iqr = reports.iter().map(|r| r.iqr_late).fold(0.0, f64::max);
    let max_s = reports
        .iter()
        .map(|r| r.mann_kendall_s.abs())
        .max()
        .unwrap_or(0);
    ensure(
        bad.is_empty(),
        format!(
            "agent ratings only: {} of 50 movies within bounds, max late IQR {max_iqr}, max |S| {max_s}",
            50 - bad.len()
        ),
    )
}

fn scenario_three_dispersion() -> Outcome {
    let cfg = scenario_cfg(
        Scenario::III,
        SyntheticPolicy::persona_prior(5.5, 4.0, 1.0),
        2026,
    );
    let record = run_synthetic(&cfg, 50);
    let reports = analyze_run(&record, AnalysisOptions::default()).unwrap();
    let abs_rho: Vec<f64> = reports
        .iter()
        .filter_map(|r| r.spearman_rho)
        .map(f64::abs)
        .collect();
    let med_rho = median(abs_rho.clone());
    let wide = reports.iter().filter(|r| r.iqr_late >= 2.0).count();
    let share = wide as f64 / reports.len() as f64;
    ensure(
        med_rho <= 0.3 && share >= 0.3,
        format!(
            "median |rho| {med_rho:.3} over {} defined movies (bound 0.3), late IQR >= 2 in {wide}/50",
            abs_rho.len()
        ),
    )
}

fn scenario_four_positivity() -> Outcome {
    let cfg = scenario_cfg(
        Scenario::IV,
        SyntheticPolicy::positivity_prior(8.0, 0.0),
        2027,
    );
    let record = run_synthetic(&cfg, 50);
    let opts = AnalysisOptions {
        exclude_warmups: true,
    };
    let mut steps = 0;
    let mut off = 0;
    for seq in &record.movie_sequences {
        let rows = case_series(&record, &seq.movie_id, opts).unwrap();
        steps += rows.len();
        off += rows.iter().filter(|r| r.pos != 1.0).count();
    }
    ensure(
        off == 0 && steps == 50 * 100,
        format!("{steps} steps over 50 movies, {off} with pos != 1.0"),
    )
}

/// Conformist whose weight on the history is proportional to the semantic
/// match between its persona and the movie.
struct MatchCoupled {
    base: SyntheticPolicy,
    weights: HashMap<(String, String), f64>,
}

impl RatingAgent for MatchCoupled {
    fn backend_id(&self) -> String {
        "synthetic:conformist".into()
    }

    fn rate(
        &self,
        ctx: &AgentContext<'_>,
        _scenario: Scenario,
        n: usize,
    ) -> Result<Vec<u32>, AgentError> {
        let persona = ctx.persona.ok_or(AgentError::MissingPersona)?;
        let mut policy = self.base.clone();
        policy.conformity_weight =
            self.weights[&(persona.persona_id.clone(), ctx.movie.movie_id.clone())];
        (0..n as u64)
            .map(|s| {
                let mut c = ctx.clone();
                c.rng_seed = derive_seed(ctx.rng_seed, "sample", s);
                synthetic_rate(&policy, &c)
            })
            .collect()
    }
}

const TOPICS: [&[&str]; 5] = [
    &["space", "galaxy", "robots", "aliens", "starship", "planet"],
    &["romance", "love", "wedding", "paris", "letters", "heart"],
    &["war", "soldiers", "battle", "trenches", "general", "siege"],
    &["haunted", "ghosts", "night", "curse", "cellar", "whispers"],
    &["heist", "vault", "detective", "crime", "casino", "getaway"],
];

fn coupled_corpus(g: &mut ChaCha8Rng) -> (Vec<MovieItem>, Vec<Persona>) {
    let movies = (0..5)
        .map(|i| {
            let words: Vec<&str> = (0..12).map(|_| *TOPICS[i].choose(g).unwrap()).collect();
            MovieItem {
                movie_id: format!("mv{i}"),
                title: format!("Picture {i}"),
                genres: vec![],
                overview: format!("A film with {}.", words.join(" ")),
                release_date: "2015-03-01".into(),
                external_avg: None,
            }
        })
        .collect();
    let personas = (0..40)
        .map(|i| {
            let n_topics = g.random_range(1..=3);
            let mut words = vec!["viewer"];
            for _ in 0..n_topics {
                let topic = TOPICS[g.random_range(0..TOPICS.len())];
                for _ in 0..g.random_range(1..=5) {
                    words.push(topic.choose(g).unwrap());
                }
            }
            Persona {
                persona_id: format!("pp{i:02}"),
                description: words.join(" "),
            }
        })
        .collect();
    (movies, personas)
}

fn persona_match_coupling() -> Outcome {
    let mut correlations = Vec::new();
    for rep in 0..20u64 {
        let mut g = rng(1000 + rep);
        let (movies, personas) = coupled_corpus(&mut g);
        let idf = IdfTable::for_corpus(&personas, &movies);
        let mut scores = BTreeMap::new();
        for p in &personas {
            for m in &movies {
                scores.insert(
                    (p.persona_id.clone(), m.movie_id.clone()),
                    semantic_match(p, m, &idf),
                );
            }
        }
        let top = scores.values().cloned().fold(0.0, f64::max);
        let weights = scores.into_iter().map(|(k, s)| (k, s / top)).collect();
        let base = SyntheticPolicy::conformist(5.5, 4.0, 0.0, 0.5);
        let mut cfg = ScenarioConfig {
            population_n: 40,
            warmup_m: 10,
            late_window_l: 10,
            master_seed: rep,
            backend_id: "synthetic:conformist".into(),
            synthetic: Some(base.clone()),
            jobs: 4,
            ..ScenarioConfig::default()
        };
        cfg.set_scenario(Scenario::I);
        let agent = MatchCoupled { base, weights };
        let record = run_experiment(&cfg, &movies, &personas, &agent).map_err(|e| e.to_string())?;
        let study = match_vs_distance(&record, &movies, &personas).map_err(|e| e.to_string())?;
        correlations.push(study.correlation.unwrap_or(f64::NAN));
    }
    let negative = correlations.iter().filter(|c| **c < 0.0).count();
    let lo = correlations.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = correlations
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    ensure(
        negative == 20,
        format!("negative in {negative}/20 replications, range [{lo:.3}, {hi:.3}]"),
    )
}

// ---- CLI-driven checks ----------------------------------------------------

fn spiral() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spiral"));
    cmd.env("SOURCE_DATE_EPOCH", "1700000000");
    cmd
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{:?} exited {:?}: {}",
            cmd.get_args().collect::<Vec<_>>(),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn files_with(dir: &Path, ext: &str) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    write_jsonl(&root.join("movies.jsonl"), &movies(8)).unwrap();
    write_jsonl(&root.join("personas.jsonl"), &personas(30)).unwrap();
    let cfg = serde_json::json!({
        "population_n": 30,
        "late_window_l": 15,
        "master_seed": 77,
        "backend_id": "synthetic:conformist",
        "synthetic": {"kind": "conformist", "base_rating": 8.0, "conformity_weight": 0.8,
                      "noise_sd": 0.5, "persona_hash_spread": 3.0},
        "jobs": 3
    });
    fs::write(root.join("config.json"), cfg.to_string()).unwrap();

    let mut snapshots = Vec::new();
    for side in ["a", "b"] {
        let base = root.join(side);
        let record = base.join("run");
        let analysis = base.join("analysis");
        run_ok(
            spiral()
                .arg("run")
                .arg("--config")
                .arg(root.join("config.json"))
                .arg("--movies")
                .arg(root.join("movies.jsonl"))
                .arg("--personas")
                .arg(root.join("personas.jsonl"))
                .arg("--scenario")
                .arg("I")
                .arg("--out")
                .arg(&record),
        )?;
        run_ok(
            spiral()
                .arg("analyze")
                .arg(&record)
                .arg("--out")
                .arg(&analysis),
        )?;
        run_ok(
            spiral()
                .arg("report")
                .arg(analysis.join("run"))
                .arg("--record")
                .arg(&record),
        )?;
        let mut files = files_with(&record, "jsonl");
        files.extend(files_with(&analysis.join("run"), "csv"));
        snapshots.push(files);
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let jsonl = a.keys().filter(|k| k.ends_with(".jsonl")).count();
    let csv = a.keys().filter(|k| k.ends_with(".csv")).count();
    ensure(
        differing.is_empty() && a.len() == b.len() && jsonl == 8 && csv > 8,
        format!(
            "{jsonl} ratings JSONL + {csv} CSV files compared, {} differ",
            differing.len()
        ),
    )
}

struct Stub(Child);

impl Drop for Stub {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn llm_path_offline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    fs::write(
        root.join("script.txt"),
        "regex: Character Profile => I'd rate this a 7.\nalways: 5\n",
    )
    .unwrap();
    write_jsonl(&root.join("movies.jsonl"), &movies(2)).unwrap();
    write_jsonl(&root.join("personas.jsonl"), &personas(5)).unwrap();

    let mut child = spiral()
        .arg("stub-server")
        .arg("--port")
        .arg("0")
        .arg("--script")
        .arg(root.join("script.txt"))
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let _stub = Stub(child);
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected stub banner {line:?}"))?
        .to_string();

    let record_dir: PathBuf = root.join("llm_run");
    let status = spiral()
        .arg("run")
        .arg("--movies")
        .arg(root.join("movies.jsonl"))
        .arg("--personas")
        .arg(root.join("personas.jsonl"))
        .arg("--scenario")
        .arg("I")
        .arg("--backend")
        .arg("llm")
        .arg("--out")
        .arg(&record_dir)
        .arg("population_n=5")
        .arg("late_window_l=5")
        .arg(format!("llm.endpoint_url={url}"))
        .arg("llm.timeout_ms=5000")
        .arg("llm.auth_token_env_var=SPIRAL_ACCEPTANCE_NO_TOKEN")
        .output()
        .map_err(|e| e.to_string())?
        .status;
    let record = load_record(&record_dir).map_err(|e| e.to_string())?;
    let agent_events: Vec<_> = record
        .movie_sequences
        .iter()
        .flat_map(|s| s.events.iter().filter(|e| !e.is_warmup()))
        .collect();
    let three = agent_events.iter().all(|e| e.raw_samples.len() == 3);
    let findings = audit_record(&record);
    let replay = spiral()
        .arg("replay-audit")
        .arg(&record_dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        status.code() == Some(0)
            && record.movie_sequences.len() == 2
            && agent_events.len() == 10
            && three
            && findings.is_empty()
            && replay.status.success(),
        format!(
            "exit {:?}, {} movies, {} agent events, 3 samples each: {three}, audit findings {}, replay-audit exit {:?}",
            status.code(),
            record.movie_sequences.len(),
            agent_events.len(),
            findings.len(),
            replay.status.code()
        ),
    )
}

fn main() {
    let checks: [Check; 11] = [
        (
            "mann_kendall_matches_brute_force",
            mann_kendall_matches_brute_force,
        ),
        ("spearman_matches_oracles", spearman_matches_oracles),
        (
            "concentration_matches_oracles",
            concentration_matches_oracles,
        ),
        ("aggregation_is_correct", aggregation_is_correct),
        ("scenario_one_consensus", scenario_one_consensus),
        ("scenario_two_anchoring", scenario_two_anchoring),
        ("scenario_three_dispersion", scenario_three_dispersion),
        ("scenario_four_positivity", scenario_four_positivity),
        ("persona_match_coupling", persona_match_coupling),
        ("end_to_end_determinism", end_to_end_determinism),
        ("llm_path_offline", llm_path_offline),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

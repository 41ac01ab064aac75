use std::fmt::Write;

use super::{AgentContext, AgentError};
use crate::model::Scenario;

/// Instantiates the rating prompt for the given signal combination.
///
/// Section order is fixed: instruction, character profile (persona only),
/// movie information (with the average-rating line when history is shown),
/// rating principle, output principle. The no-signal variant carries an
/// extra blank line after the movie block.
pub fn render_prompt(ctx: &AgentContext<'_>, scenario: Scenario) -> Result<String, AgentError> {
    let max = ctx.scale.levels_max();
    let mut out = String::from("Please provide your rating for the movie.\n\n");

    if scenario.use_persona {
        let persona = ctx.persona.ok_or(AgentError::MissingPersona)?;
        out.push_str("# Your Character Profile\n");
        let _ = writeln!(out, "You are {}", persona.description);
        out.push('\n');
    }

    out.push_str("# Movie Information\n");
    let _ = writeln!(out, "Title: {}", ctx.movie.title);
    let _ = writeln!(out, "Genres: {}", ctx.movie.genres.join(", "));
    let _ = writeln!(out, "Overview: {}", ctx.movie.overview);
    if scenario.use_history {
        let avg = ctx
            .history_avg_display
            .as_deref()
            .ok_or(AgentError::MissingHistory)?;
        let _ = writeln!(out, "Movie average rating: {avg} (1-{max})");
    }
    out.push('\n');
    if !scenario.use_history && !scenario.use_persona {
        out.push('\n');
    }

    out.push_str("# Rating Principle\n");
    let _ = writeln!(
        out,
        "Rate the above movie on an integer scale from 1 to {max}, where:"
    );
    out.push('\n');
    out.push_str("- 1 = Awful/Abysmal (unwatchable)\n");
    let _ = writeln!(
        out,
        "- {} = Mediocre/Unsure (forgettable)",
        (max / 2).max(1)
    );
    let _ = writeln!(out, "- {max} = Perfect/Masterpiece (flawless)");
    out.push('\n');
    out.push_str("# Output Principle\n");
    let _ = write!(
        out,
        "Provide only a single integer (1-{max}) without extra text."
    );
    Ok(out)
}

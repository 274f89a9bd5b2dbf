//! Prompt rendering and reply parsing.
//!
//! The template lives here verbatim, in one place, and is pinned by a
//! snapshot test: silent prompt drift would silently change results. The
//! same template serves every task — scalar norms and top-k spectra alike —
//! so no task is advantaged by its prompt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Demonstration;
use crate::linalg::NumericArray;

/// Instruction block shown before the examples. `{machine_index}` is
/// substituted at render time.
pub const DEFAULT_TEMPLATE_HEADER: &str = "You observe a machine that produces an output y for a given input x:\n\nMachine {machine_index}:\n\nIf no previous examples are available, sample y from your prior distribution. Provide only the output, formatted as a set of values that matches the length of the previous y's, followed by semicolons. No words, only numbers and semicolons. Even if you are unsure, try to find a pattern and predict y as accurately as possible.\n\nExamples:\n";

/// Final line asking for the prediction. `{input}` is substituted with the
/// rendered query input.
pub const DEFAULT_TEMPLATE_QUERY: &str = "Given x = {input}, predict y:";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub input_decimals: usize,
    pub target_decimals: usize,
    pub machine_index: usize,
    pub template_header: String,
    pub template_query: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            input_decimals: 2,
            target_decimals: 4,
            machine_index: 1,
            template_header: DEFAULT_TEMPLATE_HEADER.to_string(),
            template_query: DEFAULT_TEMPLATE_QUERY.to_string(),
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !self.template_query.contains("{input}") {
            return Err(RenderError::MissingPlaceholder { slot: "{input}" });
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("query template is missing the {slot} placeholder")]
    MissingPlaceholder { slot: &'static str },
    #[error("demonstration {index} has shape {got_rows}x{got_cols}, query is {rows}x{cols}")]
    ShapeMismatch { index: usize, got_rows: usize, got_cols: usize, rows: usize, cols: usize },
    #[error("demonstration {index} target length {got} does not match output length {expected}")]
    TargetLength { index: usize, got: usize, expected: usize },
}

/// Why a reply failed to parse; the caller regenerates on any of these.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("empty reply")]
    Empty,
    #[error("non-numeric token {token:?}")]
    NonNumericToken { token: String },
    #[error("expected {expected} values, got {got}")]
    CountMismatch { expected: usize, got: usize },
}

/// Values recovered from a predictor reply, plus the original text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub values: Vec<f64>,
    pub raw: String,
}

/// Renders a number with a fixed decimal count, e.g. 3 -> "3.00".
fn render_number(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

/// Vectors render as one bracketed row, matrices as bracketed rows nested in
/// outer brackets: `[[a, b], [c, d]]`.
pub fn render_input(a: &NumericArray, decimals: usize) -> String {
    let row = |r: usize| {
        let cells: Vec<String> =
            (0..a.cols()).map(|c| render_number(a.get(r, c), decimals)).collect();
        format!("[{}]", cells.join(", "))
    };
    if a.is_vector() {
        let cells: Vec<String> =
            (0..a.rows()).map(|r| render_number(a.get(r, 0), decimals)).collect();
        format!("[{}]", cells.join(", "))
    } else {
        let rows: Vec<String> = (0..a.rows()).map(row).collect();
        format!("[{}]", rows.join(", "))
    }
}

/// Target line content: every value terminated by a semicolon.
pub fn render_target(values: &[f64], decimals: usize) -> String {
    let cells: Vec<String> = values.iter().map(|v| render_number(*v, decimals)).collect();
    format!("{};", cells.join("; "))
}

/// Renders the full prompt: header, one `x = ... / y = ...;` block per
/// context demonstration, then the query line with no target.
///
/// An empty context is legal; the header's prior-distribution sentence covers
/// the zero-shot case.
pub fn render_prompt(
    cfg: &PromptConfig,
    context: &[Demonstration],
    query_input: &NumericArray,
    output_len: usize,
) -> Result<String, RenderError> {
    cfg.validate()?;
    let (rows, cols) = query_input.shape();
    for (index, demo) in context.iter().enumerate() {
        let (got_rows, got_cols) = demo.input.shape();
        if (got_rows, got_cols) != (rows, cols) {
            return Err(RenderError::ShapeMismatch { index, got_rows, got_cols, rows, cols });
        }
        if demo.target.len() != output_len {
            return Err(RenderError::TargetLength {
                index,
                got: demo.target.len(),
                expected: output_len,
            });
        }
    }

    let mut out = cfg
        .template_header
        .replace("{machine_index}", &cfg.machine_index.to_string());
    for demo in context {
        out.push_str("x = ");
        out.push_str(&render_input(&demo.input, cfg.input_decimals));
        out.push_str("\ny = ");
        out.push_str(&render_target(&demo.target, cfg.target_decimals));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(
        &cfg.template_query
            .replace("{input}", &render_input(query_input, cfg.input_decimals)),
    );
    Ok(out)
}

/// Parses a reply into exactly `output_len` finite values.
///
/// Accepted deviations are bounded and enumerated: surrounding whitespace and
/// newlines, one optional leading `y =`, and a missing final semicolon.
/// Anything alphabetic beyond that prefix is rejected, per the prompt's
/// "No words, only numbers and semicolons".
pub fn parse_reply(raw: &str, output_len: usize) -> Result<ParsedReply, FormatError> {
    let mut body = raw.trim();
    if body.is_empty() {
        return Err(FormatError::Empty);
    }
    if let Some(rest) = body.strip_prefix('y') {
        let rest = rest.trim_start();
        if let Some(after_eq) = rest.strip_prefix('=') {
            body = after_eq.trim_start();
        }
    }
    if body.is_empty() {
        return Err(FormatError::Empty);
    }
    if body.chars().any(|c| c.is_alphabetic()) {
        let token = body
            .split(';')
            .map(str::trim)
            .find(|t| t.chars().any(|c| c.is_alphabetic()))
            .unwrap_or(body)
            .to_string();
        return Err(FormatError::NonNumericToken { token });
    }

    let mut tokens: Vec<&str> = body.split(';').map(str::trim).collect();
    if tokens.last() == Some(&"") {
        tokens.pop(); // trailing semicolon
    }
    if tokens.is_empty() {
        return Err(FormatError::Empty);
    }

    let mut values = Vec::with_capacity(tokens.len());
    for token in &tokens {
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ => return Err(FormatError::NonNumericToken { token: token.to_string() }),
        }
    }
    if values.len() != output_len {
        return Err(FormatError::CountMismatch { expected: output_len, got: values.len() });
    }
    Ok(ParsedReply { values, raw: raw.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn demo(input: &[f64], target: &[f64]) -> Demonstration {
        Demonstration {
            input: NumericArray::vector(input.to_vec()).unwrap(),
            target: target.to_vec(),
        }
    }

    #[test]
    fn header_snapshot_is_byte_exact() {
        assert_eq!(
            DEFAULT_TEMPLATE_HEADER,
            "You observe a machine that produces an output y for a given input x:\n\n\
             Machine {machine_index}:\n\n\
             If no previous examples are available, sample y from your prior distribution. \
             Provide only the output, formatted as a set of values that matches the length \
             of the previous y's, followed by semicolons. No words, only numbers and \
             semicolons. Even if you are unsure, try to find a pattern and predict y as \
             accurately as possible.\n\nExamples:\n"
        );
        assert_eq!(DEFAULT_TEMPLATE_QUERY, "Given x = {input}, predict y:");
    }

    #[test]
    fn full_render_snapshot() {
        let cfg = PromptConfig::default();
        let context = vec![demo(&[3.0, 4.0], &[5.0])];
        let query = NumericArray::vector(vec![6.0, 8.0]).unwrap();
        let text = render_prompt(&cfg, &context, &query, 1).unwrap();
        let expected = format!(
            "{}x = [3.00, 4.00]\ny = 5.0000;\n\nGiven x = [6.00, 8.00], predict y:",
            DEFAULT_TEMPLATE_HEADER.replace("{machine_index}", "1")
        );
        assert_eq!(text, expected);
    }

    #[test]
    fn render_contains_target_line_and_query() {
        let cfg = PromptConfig::default();
        let context = vec![demo(&[3.0, 4.0], &[5.0])];
        let query = NumericArray::vector(vec![6.0, 8.0]).unwrap();
        let text = render_prompt(&cfg, &context, &query, 1).unwrap();
        assert!(text.contains("y = 5.0000;\n"));
        assert!(text.ends_with("Given x = [6.00, 8.00], predict y:"));
    }

    #[test]
    fn empty_context_keeps_prior_instruction() {
        let cfg = PromptConfig::default();
        let query = NumericArray::vector(vec![1.0]).unwrap();
        let text = render_prompt(&cfg, &[], &query, 1).unwrap();
        assert!(text.contains("sample y from your prior distribution"));
        assert_eq!(text.lines().filter(|l| l.starts_with("x = ")).count(), 0);
    }

    #[test]
    fn matrix_renders_as_nested_rows() {
        let cfg = PromptConfig::default();
        let a = NumericArray::matrix(5, 5, (0..25).map(|i| i as f64).collect()).unwrap();
        let rendered = render_input(&a, cfg.input_decimals);
        assert!(rendered.starts_with("[["));
        assert!(rendered.ends_with("]]"));
        assert_eq!(rendered.matches('[').count(), 6); // outer + 5 rows
        assert!(rendered.contains("[0.00, 1.00, 2.00, 3.00, 4.00]"));
    }

    #[test]
    fn example_block_count_matches_context_len() {
        let cfg = PromptConfig::default();
        let query = NumericArray::vector(vec![1.0, 2.0]).unwrap();
        for k in 0..5 {
            let context: Vec<_> = (0..k).map(|i| demo(&[i as f64, 1.0], &[2.0])).collect();
            let text = render_prompt(&cfg, &context, &query, 1).unwrap();
            assert_eq!(text.lines().filter(|l| l.starts_with("x = ")).count(), k);
        }
    }

    #[test]
    fn render_rejects_shape_and_length_mismatch() {
        let cfg = PromptConfig::default();
        let query = NumericArray::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let bad_shape = vec![demo(&[1.0, 2.0], &[1.0])];
        assert!(matches!(
            render_prompt(&cfg, &bad_shape, &query, 1),
            Err(RenderError::ShapeMismatch { .. })
        ));
        let bad_len = vec![demo(&[1.0, 2.0, 3.0], &[1.0, 2.0])];
        assert!(matches!(
            render_prompt(&cfg, &bad_len, &query, 1),
            Err(RenderError::TargetLength { .. })
        ));
    }

    #[test]
    fn render_is_deterministic() {
        let cfg = PromptConfig::default();
        let context = vec![demo(&[3.0, 4.0], &[5.0])];
        let query = NumericArray::vector(vec![6.0, 8.0]).unwrap();
        let a = render_prompt(&cfg, &context, &query, 1).unwrap();
        let b = render_prompt(&cfg, &context, &query, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parse_accepts_standard_forms() {
        assert_eq!(parse_reply("23.5; 11.2; 4.0;", 3).unwrap().values, vec![23.5, 11.2, 4.0]);
        assert_eq!(parse_reply("318.77", 1).unwrap().values, vec![318.77]);
        assert_eq!(parse_reply("  -7.5 ;\n", 1).unwrap().values, vec![-7.5]);
        assert_eq!(parse_reply("y = 1.0; 2.0;", 2).unwrap().values, vec![1.0, 2.0]);
        assert_eq!(parse_reply("y=3.5", 1).unwrap().values, vec![3.5]);
    }

    #[test]
    fn parse_rejects_words_counts_and_empty() {
        assert!(matches!(
            parse_reply("The answer is 5;", 1),
            Err(FormatError::NonNumericToken { .. })
        ));
        assert!(matches!(
            parse_reply("1.0; 2.0;", 3),
            Err(FormatError::CountMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(parse_reply("   ", 1), Err(FormatError::Empty)));
        assert!(matches!(parse_reply("1.0;; 2.0;", 2), Err(FormatError::NonNumericToken { .. })));
        assert!(matches!(parse_reply("nan;", 1), Err(FormatError::NonNumericToken { .. })));
        // A huge digit string overflows to infinity; rejected as non-numeric.
        let huge = format!("1{}", "0".repeat(400));
        assert!(matches!(parse_reply(&huge, 1), Err(FormatError::NonNumericToken { .. })));
    }

    #[test]
    fn parse_rejects_scientific_notation() {
        // 'e' counts as a word character under the only-numbers rule.
        assert!(matches!(parse_reply("1.5e2;", 1), Err(FormatError::NonNumericToken { .. })));
    }

    #[test]
    fn target_round_trip_to_four_decimals() {
        let mut rng = SplitMix64::new(1234);
        let cfg = PromptConfig::default();
        for len in [1usize, 3] {
            for _ in 0..1000 {
                let target: Vec<f64> =
                    (0..len).map(|_| rng.uniform_in(-500.0, 500.0)).collect();
                let line = render_target(&target, cfg.target_decimals);
                let parsed = parse_reply(&line, len).unwrap();
                for (orig, got) in target.iter().zip(&parsed.values) {
                    assert!(
                        (orig - got).abs() <= 0.5 * 1e-4 + 1e-12,
                        "round trip drift: {orig} vs {got}"
                    );
                }
            }
        }
    }
}

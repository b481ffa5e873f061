//! Answer extraction.
//!
//! A node counts as answered when its text matches
//! `answer is(.*)\\boxed\{.*?\}` (case-insensitive, searched in the final
//! 2000 characters) or when the generator stopped on its own. Truncation at
//! the step delimiter or at the length limit never answers a node by itself.

use std::sync::OnceLock;

use regex::Regex;

use super::GenerationResult;

/// Number of trailing characters searched for the answer pattern.
pub const SEARCH_WINDOW_CHARS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Extraction {
    pub answered: bool,
    pub answer: Option<String>,
}

fn answer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer is(.*)\\boxed\{.*?\}").expect("valid pattern"))
}

fn tail(text: &str, chars: usize) -> &str {
    match text.char_indices().rev().nth(chars.saturating_sub(1)) {
        Some((i, _)) if chars > 0 => &text[i..],
        _ => text,
    }
}

/// Content of the brace group opening right after `\boxed{` at `open`
/// (byte index of `{`). `None` if the braces never balance.
fn balanced_group(text: &str, open: usize) -> Option<&str> {
    let mut depth = 0usize;
    for (i, ch) in text[open..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[open + 1..open + i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn boxed_in(text: &str, from: usize, lazy_end: usize) -> String {
    // The regex's `\boxed{` is the last one inside the match. The pattern is
    // case-insensitive; ASCII lowercasing keeps byte offsets.
    let window = text[from..lazy_end].to_ascii_lowercase();
    let rel = window.rfind("\\boxed{").expect("match contains \\boxed{");
    let open = from + rel + "\\boxed".len();
    match balanced_group(text, open) {
        Some(inner) => inner.trim().to_string(),
        None => text[open + 1..lazy_end - 1].trim().to_string(),
    }
}

/// Answer content of the last pattern match in `text`, if any.
pub fn match_answer(text: &str) -> Option<String> {
    let window = tail(text, SEARCH_WINDOW_CHARS);
    let m = answer_pattern().find_iter(window).last()?;
    Some(boxed_in(window, m.start(), m.end()))
}

pub fn extract_answer(text: &str, result: &GenerationResult) -> Extraction {
    match match_answer(text) {
        Some(answer) => Extraction { answered: true, answer: Some(answer) },
        None => Extraction { answered: result.natural_stop, answer: None },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig3_style_answer() {
        let text = "Step 3: 48 + 24 = 72.\nTherefore, the final answer is: $\\boxed{72}$. I hope it is correct.";
        let e = extract_answer(text, &GenerationResult::natural(text, 20));
        assert_eq!(e, Extraction { answered: true, answer: Some("72".into()) });
    }

    #[test]
    fn delimiter_truncation_without_answer() {
        let r = GenerationResult::at_delimiter("Step 2: half of 48 is 24", 9);
        assert_eq!(extract_answer(&r.text, &r), Extraction::default());
    }

    #[test]
    fn natural_stop_without_box() {
        let r = GenerationResult::natural("I am done.", 3);
        assert_eq!(extract_answer(&r.text, &r), Extraction { answered: true, answer: None });
    }

    #[test]
    fn nested_braces_and_last_match() {
        let text = "the answer is \\boxed{1}. Actually the answer is $\\boxed{\\frac{1}{2}}$";
        assert_eq!(match_answer(text).as_deref(), Some("\\frac{1}{2}"));
    }

    #[test]
    fn only_tail_is_searched() {
        let mut text = String::from("the answer is \\boxed{5}");
        text.push_str(&"x".repeat(SEARCH_WINDOW_CHARS));
        assert_eq!(match_answer(&text), None);
    }
}

//! Text utilities shared by classification, risk detection and filtering.

/// Lowercase alphanumeric tokens; every other character separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Line ranges of code blocks: fenced regions delimited by three backticks,
/// plus runs of lines indented by at least four spaces that follow a blank line.
fn code_block_lines(text: &str) -> (usize, Vec<bool>) {
    let lines: Vec<&str> = text.lines().collect();
    let mut in_code = vec![false; lines.len()];
    let mut blocks = 0;
    let mut i = 0;
    let mut prev_blank = false;
    while i < lines.len() {
        let line = lines[i];
        if line.trim_start().starts_with("```") {
            // an unterminated fence runs to the end of the text
            let close = (i + 1..lines.len()).find(|&j| lines[j].trim_start().starts_with("```"));
            let end = close.unwrap_or(lines.len() - 1);
            in_code[i..=end].iter_mut().for_each(|c| *c = true);
            blocks += 1;
            i = end + 1;
            prev_blank = false;
            continue;
        }
        if prev_blank && is_indented(line) {
            let mut j = i;
            while j < lines.len() && (is_indented(lines[j]) || lines[j].trim().is_empty()) {
                in_code[j] = true;
                j += 1;
            }
            blocks += 1;
            prev_blank = lines[j - 1].trim().is_empty();
            i = j;
            continue;
        }
        prev_blank = line.trim().is_empty();
        i += 1;
    }
    (blocks, in_code)
}

fn is_indented(line: &str) -> bool {
    line.starts_with("    ") && !line.trim().is_empty()
}

pub fn count_code_blocks(text: &str) -> u32 {
    code_block_lines(text).0 as u32
}

/// Lowercases, drops code blocks and collapses whitespace runs to one space.
pub fn normalize_prose(text: &str) -> String {
    let (_, in_code) = code_block_lines(text);
    let prose = text
        .lines()
        .zip(in_code)
        .filter(|(_, code)| !code)
        .map(|(l, _)| l)
        .collect::<Vec<_>>()
        .join(" ");
    prose
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_split_on_punctuation() {
        assert_eq!(
            tokenize("IndexError: list[i]  out-of range!"),
            vec!["indexerror", "list", "i", "out", "of", "range"]
        );
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn fenced_and_indented_blocks() {
        let text = "look:\n```python\nx = 1\n```\nand\n\n    y = 2\n    z = 3\nend";
        assert_eq!(count_code_blocks(text), 2);
        assert_eq!(normalize_prose(text), "look: and end");
    }

    #[test]
    fn indented_line_without_blank_is_prose() {
        assert_eq!(count_code_blocks("hello\n    not code"), 0);
        assert_eq!(normalize_prose("Hello\n    World  "), "hello world");
    }

    #[test]
    fn unterminated_fence_counts_once() {
        assert_eq!(count_code_blocks("```\nfor i in x:\n  pass"), 1);
        assert_eq!(normalize_prose("```\nfor i in x:"), "");
    }
}

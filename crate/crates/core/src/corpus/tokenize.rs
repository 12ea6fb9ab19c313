/// Sequence-start marker; the second occurrence pools the argument pair.
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
/// Speaker placeholder for the first argument.
pub const S1: &str = "[S1]";
/// Speaker placeholder for the second argument.
pub const S2: &str = "[S2]";
pub const UNK: &str = "[UNK]";

pub const SPECIAL_TOKENS: [&str; 5] = [UNK, CLS, SEP, S1, S2];

pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lowercasing whitespace-and-punctuation splitter.
///
/// Every punctuation character becomes its own token. The bracketed special
/// tokens (`[CLS]`, `[SEP]`, `[S1]`, `[S2]`, `[UNK]`) survive intact.
#[derive(Debug, Clone, Copy, Default)]
pub struct BasicTokenizer;

impl Tokenizer for BasicTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut current = String::new();
        let mut rest = text;
        while let Some(c) = rest.chars().next() {
            if c == '[' {
                if let Some(special) = SPECIAL_TOKENS.iter().find(|s| rest.starts_with(**s)) {
                    flush(&mut current, &mut tokens);
                    tokens.push((*special).to_string());
                    rest = &rest[special.len()..];
                    continue;
                }
            }
            if c.is_whitespace() {
                flush(&mut current, &mut tokens);
            } else if c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_ascii()) {
                flush(&mut current, &mut tokens);
                tokens.push(c.to_string());
            } else {
                current.extend(c.to_lowercase());
            }
            rest = &rest[c.len_utf8()..];
        }
        flush(&mut current, &mut tokens);
        tokens
    }
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(s: &str) -> Vec<String> {
        BasicTokenizer.tokenize(s)
    }

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(tok("Hi, Ross!"), ["hi", ",", "ross", "!"]);
        assert_eq!(tok("I'm"), ["i", "'", "m"]);
    }

    #[test]
    fn keeps_special_tokens_whole() {
        assert_eq!(tok("[S1]: hello [CLS]"), ["[S1]", ":", "hello", "[CLS]"]);
        // not a known special token
        assert_eq!(tok("[x]"), ["[", "x", "]"]);
    }

    #[test]
    fn empty_and_whitespace() {
        assert!(tok("").is_empty());
        assert!(tok("  \t\n").is_empty());
    }
}

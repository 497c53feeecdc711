//! Independent validators used as test oracles.

/// Stack check that every `(` in a whitespace-tokenized string closes, and
/// nothing closes early.
pub fn brackets_balanced(text: &str) -> bool {
    let mut depth: i64 = 0;
    for tok in text.split_whitespace() {
        match tok {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

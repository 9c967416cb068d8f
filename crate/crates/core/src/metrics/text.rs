use std::collections::HashSet;

/// Percentage of duplicate n-grams: `100 * (1 - unique / total)`.
///
/// Sequences shorter than `n` have no n-grams and score 0; see [`is_short`].
pub fn rep_n(tokens: &[usize], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be positive");
    if tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let unique: HashSet<&[usize]> = tokens.windows(n).collect();
    100.0 * (1.0 - unique.len() as f64 / total as f64)
}

/// `true` when `tokens` is too short to contain an n-gram of order `n`.
pub fn is_short(tokens: &[usize], n: usize) -> bool {
    tokens.len() < n
}

/// Product of `1 - rep_n / 100` for n = 2, 3, 4.
pub fn diversity(tokens: &[usize]) -> f64 {
    diversity_from_reps(rep_n(tokens, 2), rep_n(tokens, 3), rep_n(tokens, 4))
}

pub fn diversity_from_reps(rep2: f64, rep3: f64, rep4: f64) -> f64 {
    (1.0 - rep2 / 100.0) * (1.0 - rep3 / 100.0) * (1.0 - rep4 / 100.0)
}

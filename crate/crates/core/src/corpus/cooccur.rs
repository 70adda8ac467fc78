use std::collections::BTreeMap;

use super::{CorpusError, Vocabulary};

/// Symmetric co-occurrence weights keyed by unordered id pairs, stored
/// with `i <= j`. Zero entries are absent; all stored weights are
/// positive and finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CooccurrenceStore {
    entries: BTreeMap<(u32, u32), f64>,
}

impl CooccurrenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `w` to the unordered pair `(i, j)`.
    pub fn add_weight(&mut self, i: u32, j: u32, w: f64) {
        assert!(w.is_finite() && w > 0.0, "co-occurrence weight must be positive and finite");
        let key = if i <= j { (i, j) } else { (j, i) };
        *self.entries.entry(key).or_insert(0.0) += w;
    }

    pub fn lookup(&self, i: u32, j: u32) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Canonical iteration: ascending `(i, j)` with `i <= j`.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.entries.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn max_id(&self) -> Option<u32> {
        // Keys are sorted by (i, j) with i <= j, so the largest j can sit
        // anywhere; scan for it.
        self.entries.keys().map(|&(_, j)| j).max()
    }

    pub fn merge(&mut self, other: CooccurrenceStore) {
        for ((i, j), w) in other.entries {
            *self.entries.entry((i, j)).or_insert(0.0) += w;
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common multiple of `1..=window`, the common denominator for all
/// harmonic window weights.
fn harmonic_denominator(window: usize) -> Result<u64, CorpusError> {
    if window == 0 {
        return Err(CorpusError::InvalidWindow);
    }
    let mut lcm: u64 = 1;
    for d in 2..=window as u64 {
        let g = gcd(lcm, d);
        lcm = lcm
            .checked_mul(d / g)
            .ok_or(CorpusError::WindowTooLarge { window })?;
    }
    Ok(lcm)
}

/// Accumulates window counts in integer arithmetic.
///
/// Every `1/d` weight is an exact multiple of `1/lcm(1..=window)`, so
/// counts are kept as integer numerators and only converted to floating
/// point once at the end. Integer addition is associative, which makes the
/// merged result independent of how the corpus was split across workers;
/// that is what lets a sharded run reproduce a sequential one bit for bit.
#[derive(Debug)]
pub struct CooccurrenceAccumulator {
    window: usize,
    denom: u64,
    cells: BTreeMap<(u32, u32), u128>,
}

impl CooccurrenceAccumulator {
    pub fn new(window: usize) -> Result<Self, CorpusError> {
        Ok(CooccurrenceAccumulator {
            window,
            denom: harmonic_denominator(window)?,
            cells: BTreeMap::new(),
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Counts all in-window pairs of one line. OOV tokens keep their
    /// position (distances are positional) but never form a pair.
    pub fn add_line(&mut self, vocab: &Vocabulary, tokens: &[String]) {
        let ids: Vec<Option<u32>> = tokens.iter().map(|t| vocab.id(t)).collect();
        for (pos, left) in ids.iter().enumerate() {
            let Some(a) = *left else { continue };
            let reach = self.window.min(ids.len().saturating_sub(pos + 1));
            for d in 1..=reach {
                let Some(b) = ids[pos + d] else { continue };
                let key = if a <= b { (a, b) } else { (b, a) };
                let numer = (self.denom / d as u64) as u128;
                let cell = self.cells.entry(key).or_insert(0);
                *cell = cell
                    .checked_add(numer)
                    .expect("co-occurrence numerator overflowed u128");
            }
        }
    }

    /// Folds another accumulator in. Both must use the same window.
    pub fn merge(&mut self, other: CooccurrenceAccumulator) {
        assert_eq!(
            self.window, other.window,
            "cannot merge accumulators with different windows"
        );
        for (key, numer) in other.cells {
            let cell = self.cells.entry(key).or_insert(0);
            *cell = cell
                .checked_add(numer)
                .expect("co-occurrence numerator overflowed u128");
        }
    }

    /// Converts to floating-point weights, one rounding per entry.
    pub fn finalize(self) -> CooccurrenceStore {
        let denom = self.denom as f64;
        CooccurrenceStore {
            entries: self
                .cells
                .into_iter()
                .map(|(key, numer)| (key, numer as f64 / denom))
                .collect(),
        }
    }
}

/// Counts co-occurrences over tokenized lines with a symmetric window and
/// `1/d` distance weights. Windows do not cross lines.
pub fn count_cooccurrences<I, L>(
    lines: I,
    vocab: &Vocabulary,
    window: usize,
) -> Result<CooccurrenceStore, CorpusError>
where
    I: IntoIterator<Item = L>,
    L: AsRef<[String]>,
{
    let mut acc = CooccurrenceAccumulator::new(window)?;
    for line in lines {
        acc.add_line(vocab, line.as_ref());
    }
    Ok(acc.finalize())
}

/// Same counts as [`count_cooccurrences`], produced by `workers` threads
/// over contiguous slices of the input. The integer accumulators make the
/// merged result identical to the sequential one.
pub fn count_cooccurrences_parallel(
    lines: &[Vec<String>],
    vocab: &Vocabulary,
    window: usize,
    workers: usize,
) -> Result<CooccurrenceStore, CorpusError> {
    let workers = workers.max(1).min(lines.len().max(1));
    if workers == 1 {
        return count_cooccurrences(lines, vocab, window);
    }
    // Validate the window up front so every worker can just unwrap.
    harmonic_denominator(window)?;
    let chunk = lines.len().div_ceil(workers);
    let partials = std::thread::scope(|scope| {
        let handles: Vec<_> = lines
            .chunks(chunk)
            .map(|slice| {
                scope.spawn(move || {
                    let mut acc = CooccurrenceAccumulator::new(window).unwrap();
                    for line in slice {
                        acc.add_line(vocab, line);
                    }
                    acc
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("counting worker panicked"))
            .collect::<Vec<_>>()
    });
    let mut merged = CooccurrenceAccumulator::new(window)?;
    for partial in partials {
        merged.merge(partial);
    }
    Ok(merged.finalize())
}

#[cfg(test)]
mod tests {
    use super::super::{build_vocab, MinCount};
    use super::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        build_vocab(
            tokens.iter().map(|s| s.to_string()),
            MinCount::Fixed(1),
        )
        .unwrap()
    }

    fn line(tokens: &[&str]) -> Vec<String> {
        tokens.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn harmonic_denominators() {
        assert_eq!(harmonic_denominator(1).unwrap(), 1);
        assert_eq!(harmonic_denominator(2).unwrap(), 2);
        assert_eq!(harmonic_denominator(10).unwrap(), 2520);
        assert!(matches!(
            harmonic_denominator(0),
            Err(CorpusError::InvalidWindow)
        ));
        assert!(matches!(
            harmonic_denominator(64),
            Err(CorpusError::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn window_two_weights() {
        let v = vocab(&["a", "b", "c"]);
        let store = count_cooccurrences([line(&["a", "b", "c"])], &v, 2).unwrap();
        let (a, b, c) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        assert_eq!(store.lookup(a, b), 1.0);
        assert_eq!(store.lookup(b, c), 1.0);
        assert_eq!(store.lookup(a, c), 0.5);
        assert_eq!(store.len(), 3);
    }

    #[test]
    fn single_token_line_is_empty() {
        let v = vocab(&["a"]);
        let store = count_cooccurrences([line(&["a"])], &v, 5).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn self_cooccurrence_at_distance_two() {
        let v = vocab(&["a", "b"]);
        let store = count_cooccurrences([line(&["a", "b", "a"])], &v, 2).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(store.lookup(a, b), 2.0);
        assert_eq!(store.lookup(a, a), 0.5);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn oov_occupies_position_without_counting() {
        let v = vocab(&["a", "b"]);
        // "x" is out of vocabulary: a..b are at distance 2.
        let store = count_cooccurrences([line(&["a", "x", "b"])], &v, 2).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(store.lookup(a, b), 0.5);
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn windows_do_not_cross_lines() {
        let v = vocab(&["a", "b"]);
        let store =
            count_cooccurrences([line(&["a"]), line(&["b"])], &v, 10).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn symmetric_lookup() {
        let v = vocab(&["a", "b", "c"]);
        let store = count_cooccurrences([line(&["a", "b", "c"])], &v, 2).unwrap();
        let (a, c) = (v.id("a").unwrap(), v.id("c").unwrap());
        assert_eq!(store.lookup(a, c), store.lookup(c, a));
    }

    #[test]
    fn parallel_counting_matches_sequential_exactly() {
        // Pseudorandom corpus over a small alphabet; enough lines that
        // every worker count actually splits the work.
        let words = ["a", "b", "c", "d", "e", "f", "g"];
        let mut state = 0x2545f4914f6cdd1d_u64;
        let mut lines = Vec::new();
        for _ in 0..400 {
            let mut l = Vec::new();
            let len = 3 + (state % 12) as usize;
            for _ in 0..len {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                l.push(words[(state >> 33) as usize % words.len()].to_string());
            }
            lines.push(l);
        }
        let v = vocab(&words);
        let sequential = count_cooccurrences(&lines, &v, 7).unwrap();
        for workers in [2, 3, 5, 8] {
            let parallel = count_cooccurrences_parallel(&lines, &v, 7, workers).unwrap();
            assert_eq!(parallel, sequential, "worker count {workers} changed the counts");
        }
    }
}

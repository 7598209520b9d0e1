//! Character-level Levenshtein distance and the percentage ratio used for
//! near-duplicate detection.

/// Full edit distance (unit-cost insert, delete, substitute) over chars.
pub fn distance(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (diag + usize::from(ca != cb)).min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Edit distance if it is at most `max`, else `None`.
///
/// Only cells within `max` of the diagonal are evaluated, and the scan stops
/// as soon as a whole band row exceeds `max`.
pub fn bounded_distance(a: &[char], b: &[char], max: usize) -> Option<usize> {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if a.len() - b.len() > max {
        return None;
    }
    if b.is_empty() {
        return Some(a.len());
    }
    let inf = max + 1;
    let width = b.len() + 1;
    let mut prev = vec![inf; width];
    let mut cur = vec![inf; width];
    for (j, cell) in prev.iter_mut().enumerate().take(max.min(b.len()) + 1) {
        *cell = j;
    }
    for i in 1..=a.len() {
        let lo = i.saturating_sub(max).max(1);
        let hi = (i + max).min(b.len());
        cur.iter_mut().for_each(|c| *c = inf);
        cur[0] = if i <= max { i } else { inf };
        let mut row_min = cur[0];
        for j in lo..=hi {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let v = sub.min(prev[j] + 1).min(cur[j - 1] + 1).min(inf);
            cur[j] = v;
            row_min = row_min.min(v);
        }
        if row_min > max {
            return None;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[b.len()];
    (d <= max).then_some(d)
}

/// `100 · (1 − distance / longest)`; two empty strings are identical (100).
pub fn ratio_from_distance(distance: usize, longest: usize) -> f64 {
    if longest == 0 {
        return 100.0;
    }
    100.0 * (1.0 - distance as f64 / longest as f64)
}

/// Similarity of two strings in percent.
pub fn ratio(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    ratio_from_distance(distance(&a, &b), a.len().max(b.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook full-matrix recurrence.
    fn matrix_distance(a: &[char], b: &[char]) -> usize {
        let mut m = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in m.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            m[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                m[i][j] = (m[i - 1][j] + 1).min(m[i][j - 1] + 1).min(m[i - 1][j - 1] + cost);
            }
        }
        m[a.len()][b.len()]
    }

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn known_distances() {
        assert_eq!(distance(&chars("kitten"), &chars("sitting")), 3);
        assert_eq!(distance(&chars(""), &chars("abc")), 3);
        assert_eq!(distance(&chars("ümlaut"), &chars("umlaut")), 1);
        assert_eq!(bounded_distance(&chars("kitten"), &chars("sitting"), 2), None);
        assert_eq!(bounded_distance(&chars("kitten"), &chars("sitting"), 3), Some(3));
    }

    #[test]
    fn four_substitutions_in_hundred_chars() {
        let a: String = (0..100).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let mut b: Vec<char> = a.chars().collect();
        for i in [3, 30, 60, 99] {
            b[i] = 'Z';
        }
        let b: String = b.into_iter().collect();
        assert_eq!(matrix_distance(&chars(&a), &chars(&b)), 4);
        assert_eq!(ratio(&a, &b), 96.0);
    }

    proptest! {
        #[test]
        fn matches_matrix_oracle(a in "[abc ]{0,24}", b in "[abc ]{0,24}", max in 0usize..30) {
            let (a, b) = (chars(&a), chars(&b));
            let expected = matrix_distance(&a, &b);
            prop_assert_eq!(distance(&a, &b), expected);
            prop_assert_eq!(distance(&b, &a), expected);
            prop_assert_eq!(bounded_distance(&a, &b, max), (expected <= max).then_some(expected));
        }
    }
}

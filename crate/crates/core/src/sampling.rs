//! Consecutive train/validation/test splits and labeled snapshot-pair sampling.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive 1-based timestamp range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: usize,
    pub end: usize,
}

impl TimeRange {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start == 0 || end < start {
            return Err(Error::param(format!("invalid timestamp range [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.start..=self.end
    }
}

impl fmt::Display for TimeRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(Error::param(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairExample {
    pub t1: usize,
    pub t2: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDataset {
    pub pairs: Vec<PairExample>,
    pub source: String,
    pub split: Split,
}

/// 1 iff no change-point `c` satisfies `min(t1,t2) < c <= max(t1,t2)`.
pub fn pair_label(t1: usize, t2: usize, change_points: &[usize]) -> u8 {
    let (lo, hi) = (t1.min(t2), t1.max(t2));
    u8::from(!change_points.iter().any(|&c| lo < c && c <= hi))
}

/// Consecutive ranges covering `[1, T]`; train and validation sizes are floored,
/// the remainder goes to test.
pub fn split_sequence(t_len: usize, fractions: (f64, f64, f64)) -> Result<[TimeRange; 3]> {
    let (a, b, c) = fractions;
    if t_len < 3 {
        return Err(Error::param(format!("cannot split {t_len} timestamps three ways")));
    }
    if [a, b, c].iter().any(|&x| !(x > 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::param("split fractions must be positive and sum to 1"));
    }
    let n_train = (a * t_len as f64 + 1e-9).floor() as usize;
    let n_val = (b * t_len as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= t_len {
        return Err(Error::param(format!("fractions {fractions:?} leave an empty split for T = {t_len}")));
    }
    Ok([
        TimeRange::new(1, n_train)?,
        TimeRange::new(n_train + 1, n_train + n_val)?,
        TimeRange::new(n_train + n_val + 1, t_len)?,
    ])
}

/// Default pair budget of the random scheme.
pub fn default_pair_count(t_len: usize) -> usize {
    10 * t_len
}

/// Balanced pairs drawn uniformly without replacement among all unordered
/// pairs inside `range`.
pub fn random_scheme<R: Rng + ?Sized>(
    range: TimeRange,
    change_points: &[usize],
    n_pairs: usize,
    rng: &mut R,
) -> Result<Vec<PairExample>> {
    if !n_pairs.is_multiple_of(2) {
        return Err(Error::param(format!("n_pairs must be even, got {n_pairs}")));
    }
    let mut candidates: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
    for t1 in range.iter() {
        for t2 in (t1 + 1)..=range.end {
            candidates[pair_label(t1, t2, change_points) as usize].push((t1, t2));
        }
    }
    let half = n_pairs / 2;
    let mut out = Vec::with_capacity(n_pairs);
    for label in [1u8, 0u8] {
        let pool = &candidates[label as usize];
        if pool.len() < half {
            return Err(Error::param(format!(
                "only {} label-{label} candidate pairs in {range}, {half} requested",
                pool.len()
            )));
        }
        for i in index::sample(rng, pool.len(), half) {
            let (t1, t2) = pool[i];
            out.push(PairExample { t1, t2, label });
        }
    }
    Ok(out)
}

/// Every pair `(t, t - i)` with `t` in `range`, `1 <= i <= L` and `t - i >= 1`.
///
/// The earlier snapshot may precede `range.start`, so a range of M timestamps
/// far enough from the origin yields exactly `M * L` pairs.
pub fn windowed_scheme(range: TimeRange, change_points: &[usize], l: usize) -> Result<Vec<PairExample>> {
    windowed_scheme_from(range, change_points, l, 1)
}

/// As [`windowed_scheme`] but the earlier snapshot must be `>= earliest`.
/// `earliest = range.start` keeps both snapshots inside the range.
pub fn windowed_scheme_from(
    range: TimeRange,
    change_points: &[usize],
    l: usize,
    earliest: usize,
) -> Result<Vec<PairExample>> {
    if l == 0 {
        return Err(Error::param("window length L must be at least 1"));
    }
    let earliest = earliest.max(1);
    let mut out = Vec::new();
    for t in range.iter() {
        for i in 1..=l {
            if t < i || t - i < earliest {
                break;
            }
            let t1 = t - i;
            out.push(PairExample { t1, t2: t, label: pair_label(t1, t, change_points) });
        }
    }
    Ok(out)
}

/// A window of `width` timestamps centered on a uniformly drawn change-point,
/// clamped to `[1, T]`.
pub fn centered_validation_window<R: Rng + ?Sized>(
    t_len: usize,
    change_points: &[usize],
    width: usize,
    rng: &mut R,
) -> Result<TimeRange> {
    if change_points.is_empty() {
        return Err(Error::param("no change-point to center the validation window on"));
    }
    if width == 0 || width > t_len {
        return Err(Error::param(format!("window width {width} does not fit in T = {t_len}")));
    }
    let c = change_points[rng.random_range(0..change_points.len())];
    let start = c.saturating_sub(width / 2).max(1).min(t_len + 1 - width);
    TimeRange::new(start, start + width - 1)
}

impl PairDataset {
    /// CSV with `#` comment lines, a `t1,t2,label` header, then one row per pair.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        writeln!(w, "# source: {}", self.source)?;
        writeln!(w, "# split: {}", self.split)?;
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "t1,t2,label")?;
        for p in &self.pairs {
            writeln!(w, "{},{},{}", p.t1, p.t2, p.label)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut ds = PairDataset { pairs: Vec::new(), source: String::new(), split: Split::Train };
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(s) = comment.strip_prefix("source:") {
                    ds.source = s.trim().to_string();
                } else if let Some(s) = comment.strip_prefix("split:") {
                    ds.split = s.trim().parse().map_err(|e: Error| Error::Parse { line: lineno, message: e.to_string() })?;
                }
                continue;
            }
            if trimmed.is_empty() || trimmed == "t1,t2,label" {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse { line: lineno, message: format!("{s:?}: {e}") });
            if fields.len() != 3 {
                return Err(Error::Parse { line: lineno, message: format!("expected 3 fields, found {}", fields.len()) });
            }
            let (t1, t2, label) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
            if label > 1 || t1 == t2 || t1 == 0 || t2 == 0 {
                return Err(Error::Parse { line: lineno, message: "invalid pair row".into() });
            }
            ds.pairs.push(PairExample { t1, t2, label: label as u8 });
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_examples() {
        let s = split_sequence(10, (0.5, 0.2, 0.3)).unwrap();
        assert_eq!(s, [TimeRange::new(1, 5).unwrap(), TimeRange::new(6, 7).unwrap(), TimeRange::new(8, 10).unwrap()]);
        let s = split_sequence(100, (0.5, 0.2, 0.3)).unwrap();
        assert_eq!(s.map(|r| r.len()), [50, 20, 30]);
        assert!(split_sequence(10, (1.0, 0.0, 0.0)).is_err());
        assert!(split_sequence(2, (0.4, 0.3, 0.3)).is_err());
    }

    #[test]
    fn boundary_label_convention() {
        assert_eq!(pair_label(3, 6, &[6]), 0);
        assert_eq!(pair_label(6, 3, &[6]), 0);
        assert_eq!(pair_label(6, 9, &[6]), 1);
        assert_eq!(pair_label(1, 5, &[6]), 1);
    }

    #[test]
    fn random_scheme_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let range = TimeRange::new(1, 10).unwrap();
        let pairs = random_scheme(range, &[6], 4, &mut rng).unwrap();
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            let straddles = p.t1.min(p.t2) < 6 && p.t1.max(p.t2) >= 6;
            assert_eq!(p.label == 0, straddles);
        }
        assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), 2);
        assert_eq!(default_pair_count(57), 570);
        let err = random_scheme(range, &[], 4, &mut rng).unwrap_err();
        assert!(err.to_string().contains("label-0"));
    }

    #[test]
    fn random_scheme_has_no_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let range = TimeRange::new(1, 12).unwrap();
        // 5*4/2 + 7*6/2 = 31 positives
        let pairs = random_scheme(range, &[6], 62, &mut rng).unwrap();
        let mut seen: Vec<_> = pairs.iter().map(|p| (p.t1, p.t2)).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 62);
        assert!(random_scheme(range, &[6], 64, &mut rng).is_err());
    }

    #[test]
    fn windowed_examples() {
        let pairs = windowed_scheme(TimeRange::new(1, 3).unwrap(), &[], 1).unwrap();
        let got: Vec<_> = pairs.iter().map(|p| (p.t1, p.t2, p.label)).collect();
        assert_eq!(got, vec![(1, 2, 1), (2, 3, 1)]);
        let far = TimeRange::new(101, 157).unwrap();
        assert_eq!(windowed_scheme(far, &[130], 12).unwrap().len(), 684);
        assert!(windowed_scheme(far, &[], 12).unwrap().iter().all(|p| p.label == 1));
        assert!(windowed_scheme(far, &[], 0).is_err());
    }

    #[test]
    fn validation_window_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = centered_validation_window(500, &[200], 60, &mut rng).unwrap();
        assert_eq!((w.start, w.end), (170, 229));
        let w = centered_validation_window(500, &[10], 60, &mut rng).unwrap();
        assert_eq!((w.start, w.end), (1, 60));
        let w = centered_validation_window(500, &[495], 60, &mut rng).unwrap();
        assert_eq!((w.start, w.end), (441, 500));
    }

    #[test]
    fn csv_round_trip() {
        let ds = PairDataset {
            pairs: vec![PairExample { t1: 1, t2: 4, label: 1 }, PairExample { t1: 7, t2: 2, label: 0 }],
            source: "net.jsonl".into(),
            split: Split::Validation,
        };
        let mut buf = Vec::new();
        ds.write_csv(&mut buf, &["seed: 3".into()]).unwrap();
        assert_eq!(PairDataset::read_csv(&buf[..]).unwrap(), ds);
        let bad = b"t1,t2,label\n1,2,1\n3,x,0\n";
        match PairDataset::read_csv(&bad[..]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    fn brute_window_count(range: TimeRange, l: usize, earliest: usize) -> usize {
        let mut count = 0;
        for t2 in range.iter() {
            for t1 in earliest..t2 {
                if t2 - t1 <= l {
                    count += 1;
                }
            }
        }
        count
    }

    proptest! {
        #[test]
        fn windowed_labels_and_counts(start in 1usize..30, len in 1usize..50, l in 1usize..15,
                                      cps in proptest::collection::vec(2usize..90, 0..4)) {
            let range = TimeRange::new(start, start + len - 1).unwrap();
            let mut cps = cps;
            cps.sort_unstable();
            cps.dedup();
            let pairs = windowed_scheme(range, &cps, l).unwrap();
            prop_assert_eq!(pairs.len(), brute_window_count(range, l, 1));
            let inside = windowed_scheme_from(range, &cps, l, range.start).unwrap();
            prop_assert_eq!(inside.len(), brute_window_count(range, l, range.start));
            if len > l {
                prop_assert_eq!(inside.len(), l * (len - l) + l * (l - 1) / 2);
            }
            for p in pairs.iter().chain(&inside) {
                prop_assert!(p.t1 != p.t2 && p.t2 - p.t1 <= l);
                prop_assert_eq!(p.label, pair_label(p.t1, p.t2, &cps));
            }
        }

        #[test]
        fn random_scheme_is_balanced(seed in 0u64..1000, len in 6usize..30, half in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let range = TimeRange::new(1, len).unwrap();
            let cps = [len / 2 + 1];
            let pairs = random_scheme(range, &cps, 2 * half, &mut rng).unwrap();
            prop_assert_eq!(pairs.iter().filter(|p| p.label == 1).count(), half);
            for p in &pairs {
                prop_assert_eq!(p.label, pair_label(p.t1, p.t2, &cps));
            }
        }
    }
}

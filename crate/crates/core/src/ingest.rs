//! Dynamic correlation networks from multivariate time series.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;

/// `n` series observed at `m` times, one series per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: Matrix,
}

impl TimeSeriesPanel {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::param("empty panel"));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn m(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// One series per line, comma-separated; blank lines and `#` lines are skipped.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let row = parse_row(t, idx + 1)?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("expected {} values, found {}", first.len(), row.len()),
                    });
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse { line: 0, message: "no series found".into() });
        }
        Self::new(Matrix::from_rows(&rows)?)
    }
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            let f = f.trim();
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(Error::Parse { line: lineno, message: format!("non-finite value {f:?}") }),
                Err(e) => Err(Error::Parse { line: lineno, message: format!("{f:?}: {e}") }),
            }
        })
        .collect()
}

/// Pearson correlation of `values[:, start..start+len]`; zero-variance series
/// get correlation 0 with every other series. The diagonal is 1.
pub fn correlation_matrix(values: &Matrix, start: usize, len: usize) -> Matrix {
    let n = values.rows();
    let w = len as f64;
    let mut centered = Matrix::zeros(n, len);
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let row = &values.row(i)[start..start + len];
        let mean = row.iter().sum::<f64>() / w;
        let mut ss = 0.0;
        for (k, &x) in row.iter().enumerate() {
            centered[(i, k)] = x - mean;
            ss += (x - mean) * (x - mean);
        }
        scale[i] = (ss / w).sqrt();
    }
    let mut c = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = if scale[i] > 0.0 && scale[j] > 0.0 {
                let cov = crate::linalg::dot(centered.row(i), centered.row(j)) / w;
                (cov / (scale[i] * scale[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// One correlation matrix per full non-overlapping window.
pub fn windowed_correlations(panel: &TimeSeriesPanel, window: usize) -> Result<Vec<Matrix>> {
    if window < 2 {
        return Err(Error::param(format!("window must be at least 2, got {window}")));
    }
    if panel.m() < window {
        return Err(Error::param(format!("{} observations cannot fill a window of {window}", panel.m())));
    }
    let count = panel.m() / window;
    Ok((0..count).into_par_iter().map(|k| correlation_matrix(panel.values(), k * window, window)).collect())
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `q (N - 1)` in the sorted sample).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Edge iff an entry lies strictly below the pooled `q_low` quantile or
/// strictly above the pooled `q_high` quantile. Diagonal entries take part
/// and may yield self-loops.
pub fn quantile_truncate(mats: &[Matrix], q_low: f64, q_high: f64) -> Result<Vec<Graph>> {
    if mats.is_empty() {
        return Err(Error::param("no matrices to truncate"));
    }
    if !(0.0 <= q_low && q_low < q_high && q_high <= 1.0) {
        return Err(Error::param(format!("need 0 <= q_low < q_high <= 1, got {q_low}, {q_high}")));
    }
    let mut pooled: Vec<f64> = mats.iter().flat_map(|m| m.data().iter().copied()).collect();
    pooled.sort_by(f64::total_cmp);
    let lo = quantile(&pooled, q_low);
    let hi = quantile(&pooled, q_high);
    mats.iter()
        .map(|m| Graph::new(m.map(|v| if v < lo || v > hi { 1.0 } else { 0.0 }), None))
        .collect()
}

/// Edge iff `|entry| > eta`, off the diagonal only.
pub fn threshold_binarize(mats: &[Matrix], eta: f64) -> Result<Vec<Graph>> {
    if !(eta >= 0.0) {
        return Err(Error::param(format!("threshold must be nonnegative, got {eta}")));
    }
    mats.iter()
        .map(|m| {
            if !m.is_square() {
                return Err(Error::dim("correlation matrix must be square"));
            }
            let a = Matrix::from_fn(m.rows(), m.cols(), |i, j| if i != j && m[(i, j)].abs() > eta { 1.0 } else { 0.0 });
            Graph::new(a, None)
        })
        .collect()
}

/// Centers and scales each attribute column by its mean and population
/// standard deviation pooled over all nodes and timestamps.
pub fn standardize_attributes(attrs: &[Matrix]) -> Result<Vec<Matrix>> {
    let Some(first) = attrs.first() else {
        return Ok(Vec::new());
    };
    let d = first.cols();
    if attrs.iter().any(|a| a.cols() != d || a.rows() != first.rows()) {
        return Err(Error::dim("attribute matrices must share one shape"));
    }
    let count = (attrs.len() * first.rows()) as f64;
    let mut mean = vec![0.0; d];
    for a in attrs {
        for i in 0..a.rows() {
            for (j, m) in mean.iter_mut().enumerate() {
                *m += a[(i, j)];
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; d];
    for a in attrs {
        for i in 0..a.rows() {
            for (j, v) in var.iter_mut().enumerate() {
                *v += (a[(i, j)] - mean[j]).powi(2);
            }
        }
    }
    let sd: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(j, v)| {
            let s = (v / count).sqrt();
            if s > 0.0 {
                s
            } else {
                log::warn!("attribute {j} has zero pooled variance; centered only");
                1.0
            }
        })
        .collect();
    Ok(attrs.iter().map(|a| Matrix::from_fn(a.rows(), d, |i, j| (a[(i, j)] - mean[j]) / sd[j])).collect())
}

/// Long-format attributes: header `t,node,attr_1..attr_d`, then one row per
/// (timestamp, node), both 1-based. Every (t, node) cell must be present.
pub fn read_attributes_long<R: BufRead>(r: R) -> Result<Vec<Matrix>> {
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut d = None;
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t.starts_with("t,") || t.starts_with("t ,") {
            d = Some(t.split(',').count().saturating_sub(2));
            continue;
        }
        let vals = parse_row(t, lineno)?;
        if vals.len() < 3 {
            return Err(Error::Parse { line: lineno, message: "need t, node and at least one attribute".into() });
        }
        let width = *d.get_or_insert(vals.len() - 2);
        if vals.len() - 2 != width {
            return Err(Error::Parse { line: lineno, message: format!("expected {width} attributes") });
        }
        let index = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Parse { line: lineno, message: format!("invalid 1-based index {v}") })
            }
        };
        rows.push((index(vals[0])?, index(vals[1])?, vals[2..].to_vec()));
    }
    let d = d.unwrap_or(0);
    let t_len = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let n = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let mut out = vec![Matrix::zeros(n, d); t_len];
    let mut seen = vec![false; t_len * n];
    for (t, node, vals) in rows {
        seen[(t - 1) * n + node - 1] = true;
        out[t - 1].row_mut(node - 1).copy_from_slice(&vals);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse {
            line: 0,
            message: format!("missing attributes for t={}, node={}", missing / n + 1, missing % n + 1),
        });
    }
    Ok(out)
}

/// Matrix sequence as CSV blocks (one matrix row per line) separated by blank lines.
pub fn read_matrix_sequence<R: BufRead>(r: R) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    let mut block: Vec<Vec<f64>> = Vec::new();
    let mut block_line = 0;
    let flush = |block: &mut Vec<Vec<f64>>, out: &mut Vec<Matrix>, line: usize| -> Result<()> {
        if block.is_empty() {
            return Ok(());
        }
        let m = Matrix::from_rows(block).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if !m.is_square() {
            return Err(Error::Parse { line, message: format!("matrix block is {}x{}", m.rows(), m.cols()) });
        }
        out.push(m);
        block.clear();
        Ok(())
    };
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.starts_with('#') {
            continue;
        }
        if t.is_empty() {
            flush(&mut block, &mut out, block_line)?;
            continue;
        }
        if block.is_empty() {
            block_line = idx + 1;
        }
        let row = parse_row(t, idx + 1)?;
        if let Some(first) = block.first() {
            if first.len() != row.len() {
                return Err(Error::Parse { line: idx + 1, message: "ragged matrix row".into() });
            }
        }
        block.push(row);
    }
    flush(&mut block, &mut out, block_line)?;
    if let Some(first) = out.first() {
        if out.iter().any(|m| m.rows() != first.rows()) {
            return Err(Error::Parse { line: 0, message: "matrices differ in size".into() });
        }
    }
    Ok(out)
}

pub fn write_matrix_sequence<W: Write>(mut w: W, mats: &[Matrix], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    for (k, m) in mats.iter().enumerate() {
        if k > 0 {
            writeln!(w)?;
        }
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DynamicNetwork;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, m: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn perfect_and_anti_correlation() {
        let x = noise(1, 40, 1);
        let rows = vec![x.row(0).to_vec(), x.row(0).to_vec(), x.row(0).iter().map(|v| -v).collect()];
        let panel = TimeSeriesPanel::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        for c in windowed_correlations(&panel, 10).unwrap() {
            assert!((c[(0, 1)] - 1.0).abs() < 1e-12);
            assert!((c[(0, 2)] + 1.0).abs() < 1e-12);
            assert_eq!(c[(2, 2)], 1.0);
        }
    }

    #[test]
    fn independent_noise_is_uncorrelated_on_average() {
        let panel = TimeSeriesPanel::new(noise(2, 5000, 2)).unwrap();
        let mats = windowed_correlations(&panel, 100).unwrap();
        assert_eq!(mats.len(), 50);
        let mean = mats.iter().map(|c| c[(0, 1)]).sum::<f64>() / 50.0;
        assert!(mean.abs() <= 3.0 * (1.0 / 100f64.sqrt()));
    }

    #[test]
    fn zero_variance_and_partial_windows() {
        let mut v = noise(2, 25, 3);
        v.row_mut(1).fill(4.0);
        let panel = TimeSeriesPanel::new(v).unwrap();
        let mats = windowed_correlations(&panel, 10).unwrap();
        assert_eq!(mats.len(), 2);
        assert_eq!(mats[0][(0, 1)], 0.0);
        assert!(windowed_correlations(&panel, 1).is_err());
        assert!(windowed_correlations(&panel, 26).is_err());
    }

    #[test]
    fn quantile_examples() {
        let m = Matrix::from_rows(&[vec![0.2, 0.5], vec![0.5, 0.7]]).unwrap();
        assert!(quantile_truncate(std::slice::from_ref(&m), 0.0, 1.0).unwrap()[0].edge_count() == 0);
        let g = &quantile_truncate(std::slice::from_ref(&m), 0.0, 1.0).unwrap()[0];
        assert_eq!(g.adjacency().max_abs(), 0.0);
        let constant = Matrix::from_fn(3, 3, |_, _| 0.4);
        assert_eq!(quantile_truncate(&[constant], 0.1, 0.9).unwrap()[0].adjacency().max_abs(), 0.0);
        let pooled: Vec<Matrix> = [-0.9, -0.1, 0.0, 0.1, 0.9].iter().map(|&v| Matrix::from_diag(&[v])).collect();
        let gs = quantile_truncate(&pooled, 0.2, 0.8).unwrap();
        let edges: Vec<f64> = gs.iter().map(|g| g.adjacency()[(0, 0)]).collect();
        assert_eq!(edges, vec![1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(quantile_truncate(&[], 0.1, 0.9).is_err());
        assert!(quantile_truncate(&[m], 0.5, 0.5).is_err());
    }

    #[test]
    fn threshold_examples() {
        let c = Matrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let g = &threshold_binarize(std::slice::from_ref(&c), 0.2).unwrap()[0];
        assert_eq!(g.edges(), vec![(0, 1)]);
        assert_eq!(threshold_binarize(std::slice::from_ref(&c), 1.0).unwrap()[0].edges(), vec![]);
        let dense = correlation_matrix(&noise(5, 30, 4), 0, 30);
        let g = &threshold_binarize(&[dense], 0.0).unwrap()[0];
        assert_eq!(g.edge_count(), 10);
        assert_eq!(g.adjacency().diag(), vec![0.0; 5]);
    }

    #[test]
    fn standardization_examples() {
        let a = vec![Matrix::from_diag(&[1.0]), Matrix::from_diag(&[3.0])];
        let s = standardize_attributes(&a).unwrap();
        assert_eq!((s[0][(0, 0)], s[1][(0, 0)]), (-1.0, 1.0));
        let c = vec![Matrix::from_fn(3, 1, |_, _| 5.0); 2];
        assert!(standardize_attributes(&c).unwrap().iter().all(|m| m.max_abs() == 0.0));
        let z = standardize_attributes(&[noise(10, 3, 5), noise(10, 3, 6)]).unwrap();
        let again = standardize_attributes(&z).unwrap();
        for (x, y) in z.iter().zip(&again) {
            assert!(x.sub(y).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn csv_parsing_reports_lines() {
        let ok = "# header\n1,2,3\n4,5,6\n";
        assert_eq!(TimeSeriesPanel::read_csv(ok.as_bytes()).unwrap().m(), 3);
        match TimeSeriesPanel::read_csv("1,2\n3,oops\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match TimeSeriesPanel::read_csv("1,2\n\n3\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn long_attributes() {
        let text = "t,node,a,b\n1,1,0.5,1\n1,2,0.1,2\n2,1,3,4\n2,2,5,6\n";
        let a = read_attributes_long(text.as_bytes()).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].row(1), &[5.0, 6.0]);
        assert!(read_attributes_long("t,node,a\n1,1,0\n2,2,1\n".as_bytes()).is_err());
    }

    #[test]
    fn matrix_sequence_round_trip() {
        let mats = vec![correlation_matrix(&noise(3, 20, 7), 0, 20), correlation_matrix(&noise(3, 20, 8), 0, 20)];
        let mut buf = Vec::new();
        write_matrix_sequence(&mut buf, &mats, &["seed: 1".into()]).unwrap();
        assert_eq!(read_matrix_sequence(&buf[..]).unwrap(), mats);
    }

    #[test]
    fn ingestion_outputs_round_trip() {
        let panel = TimeSeriesPanel::new(noise(6, 400, 9)).unwrap();
        let mats = windowed_correlations(&panel, 50).unwrap();
        for graphs in [quantile_truncate(&mats, 0.1, 0.9).unwrap(), threshold_binarize(&mats, 0.2).unwrap()] {
            let net = DynamicNetwork::new(graphs, None, None).unwrap();
            let mut buf = Vec::new();
            net.write_jsonl(&mut buf, None).unwrap();
            assert_eq!(DynamicNetwork::read_jsonl(&buf[..]).unwrap().0, net);
        }
    }

    proptest! {
        #[test]
        fn truncation_density(seed in 0u64..500, q_low in 0.02f64..0.3, q_high in 0.7f64..0.98) {
            let mats: Vec<Matrix> = (0..4).map(|k| {
                let x = noise(8, 8, seed * 10 + k);
                x.add(&x.transpose()).unwrap()
            }).collect();
            let graphs = quantile_truncate(&mats, q_low, q_high).unwrap();
            let total = 4.0 * 64.0;
            let edges: f64 = graphs.iter().map(|g| g.adjacency().data().iter().sum::<f64>()).sum();
            // each entry appears twice (symmetry), so the pooled sample has 2 copies of each value
            let expected = (q_low + 1.0 - q_high) * total;
            prop_assert!((edges - expected).abs() <= 6.0, "edges {} expected {}", edges, expected);
        }
    }
}

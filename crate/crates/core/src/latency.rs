//! Pairwise transfer-latency model `l(f) = p + q·f + r·f²` and its
//! least-squares fit from probe measurements.

use crate::cluster::NcpId;
use crate::ProfileError;

/// Smallest file size the latency model is defined for, in bytes.
pub const MIN_FILE_SIZE: f64 = 1.0;
/// Largest file size the latency model is defined for, in bytes.
pub const MAX_FILE_SIZE: f64 = 10.0 * 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LatencyCoeffs {
    /// Fixed cost, seconds.
    pub p: f64,
    /// Linear cost, seconds per byte.
    pub q: f64,
    /// Quadratic cost, seconds per byte².
    pub r: f64,
}

impl LatencyCoeffs {
    pub fn new(p: f64, q: f64, r: f64) -> Self {
        Self { p, q, r }
    }

    pub fn eval(&self, f: f64) -> f64 {
        self.p + self.q * f + self.r * f * f
    }

    /// Minimum of the polynomial over the supported file-size range.
    pub fn min_over_range(&self) -> f64 {
        let mut lo = self.eval(MIN_FILE_SIZE).min(self.eval(MAX_FILE_SIZE));
        if self.r > 0.0 {
            let vertex = -self.q / (2.0 * self.r);
            if (MIN_FILE_SIZE..=MAX_FILE_SIZE).contains(&vertex) {
                lo = lo.min(self.eval(vertex));
            }
        }
        lo
    }
}

/// One measured transfer: `(file_size_bytes, seconds)`.
pub type Sample = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticFit {
    pub coeffs: LatencyCoeffs,
    /// Euclidean norm of the residual vector.
    pub residual: f64,
}

/// Least-squares quadratic fit of `samples`.
///
/// Sizes are rescaled to `[0, 1]` and the 3-column design matrix is reduced
/// with Householder reflections; the normal equations are never formed.
pub fn fit_quadratic(samples: &[Sample]) -> Result<QuadraticFit, ProfileError> {
    let mut sizes: Vec<f64> = samples.iter().map(|s| s.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if samples.len() < 3 || sizes.len() < 3 {
        return Err(ProfileError::Underdetermined {
            samples: samples.len(),
            distinct_sizes: sizes.len(),
        });
    }
    let scale = sizes.iter().fold(0.0_f64, |m, f| m.max(f.abs()));
    let m = samples.len();
    let mut a: Vec<[f64; 3]> = samples
        .iter()
        .map(|&(f, _)| {
            let u = f / scale;
            [1.0, u, u * u]
        })
        .collect();
    let mut b: Vec<f64> = samples.iter().map(|s| s.1).collect();

    for col in 0..3 {
        let norm = (col..m).map(|i| a[i][col] * a[i][col]).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ProfileError::Underdetermined {
                samples: m,
                distinct_sizes: sizes.len(),
            });
        }
        let alpha = if a[col][col] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (col..m).map(|i| a[i][col]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in col..3 {
            let dot: f64 = (col..m).map(|i| v[i - col] * a[i][j]).sum();
            let factor = 2.0 * dot / vnorm2;
            for i in col..m {
                a[i][j] -= factor * v[i - col];
            }
        }
        let dot: f64 = (col..m).map(|i| v[i - col] * b[i]).sum();
        let factor = 2.0 * dot / vnorm2;
        for i in col..m {
            b[i] -= factor * v[i - col];
        }
    }

    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let acc: f64 = (row + 1..3).map(|j| a[row][j] * x[j]).sum();
        x[row] = (b[row] - acc) / a[row][row];
    }
    let coeffs = LatencyCoeffs::new(x[0], x[1] / scale, x[2] / (scale * scale));
    let residual = samples
        .iter()
        .map(|&(f, l)| (l - coeffs.eval(f)).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(QuadraticFit { coeffs, residual })
}

/// Probe measurements for one ordered node pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSamples {
    pub src: NcpId,
    pub dst: NcpId,
    pub samples: Vec<Sample>,
}

/// Per-ordered-pair latency coefficients over `n` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    n: usize,
    coeffs: Vec<LatencyCoeffs>,
}

impl LatencyModel {
    /// Builds a model from a dense `n × n` coefficient matrix (row = source).
    /// Diagonal entries are ignored.
    pub fn from_matrix(n: usize, coeffs: Vec<LatencyCoeffs>) -> Result<Self, ProfileError> {
        if coeffs.len() != n * n {
            return Err(ProfileError::IncompleteLatency { nodes: n });
        }
        let model = Self { n, coeffs };
        for src in 0..n {
            for dst in (0..n).filter(|&d| d != src) {
                let c = model.coeffs(NcpId(src), NcpId(dst));
                if !(c.min_over_range() >= 0.0) {
                    return Err(ProfileError::NegativeTransfer {
                        src,
                        dst,
                        min: c.min_over_range(),
                    });
                }
            }
        }
        Ok(model)
    }

    /// Uniform coefficients for every distinct pair.
    pub fn uniform(n: usize, c: LatencyCoeffs) -> Result<Self, ProfileError> {
        Self::from_matrix(n, vec![c; n * n])
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self, src: NcpId, dst: NcpId) -> LatencyCoeffs {
        self.coeffs[src.0 * self.n + dst.0]
    }

    pub fn set_coeffs(&mut self, src: NcpId, dst: NcpId, c: LatencyCoeffs) {
        self.coeffs[src.0 * self.n + dst.0] = c;
    }

    /// Seconds to move `file_size` bytes from `src` to `dst`; zero on the
    /// same node.
    pub fn transfer_time(&self, src: NcpId, dst: NcpId, file_size: f64) -> Result<f64, ProfileError> {
        if !(MIN_FILE_SIZE..=MAX_FILE_SIZE).contains(&file_size) {
            return Err(ProfileError::FileSizeOutOfRange(file_size));
        }
        if src == dst {
            return Ok(0.0);
        }
        Ok(self.coeffs(src, dst).eval(file_size))
    }

    /// Rows of `(src, dst, p, q, r)` for every distinct ordered pair.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src", "dst", "p", "q", "r"])?;
        for src in 0..self.n {
            for dst in (0..self.n).filter(|&d| d != src) {
                let c = self.coeffs(NcpId(src), NcpId(dst));
                w.write_record([
                    src.to_string(),
                    dst.to_string(),
                    format!("{:e}", c.p),
                    format!("{:e}", c.q),
                    format!("{:e}", c.r),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn transfer_time(
    model: &LatencyModel,
    src: NcpId,
    dst: NcpId,
    file_size: f64,
) -> Result<f64, ProfileError> {
    model.transfer_time(src, dst, file_size)
}

/// Fits every ordered pair of an `n`-node cluster from its probe samples.
/// Each distinct pair must appear exactly once.
pub fn fit_latency_model(n: usize, probes: &[PairSamples]) -> Result<LatencyModel, ProfileError> {
    let mut coeffs = vec![LatencyCoeffs::default(); n * n];
    let mut covered = vec![false; n * n];
    for pair in probes {
        if pair.src.0 >= n || pair.dst.0 >= n || pair.src == pair.dst {
            return Err(ProfileError::IncompleteLatency { nodes: n });
        }
        let fit = fit_quadratic(&pair.samples)?;
        if !(fit.coeffs.min_over_range() >= 0.0) {
            return Err(ProfileError::NegativeTransfer {
                src: pair.src.0,
                dst: pair.dst.0,
                min: fit.coeffs.min_over_range(),
            });
        }
        let k = pair.src.0 * n + pair.dst.0;
        coeffs[k] = fit.coeffs;
        covered[k] = true;
    }
    let complete = (0..n).all(|s| (0..n).all(|d| s == d || covered[s * n + d]));
    if !complete {
        return Err(ProfileError::IncompleteLatency { nodes: n });
    }
    LatencyModel::from_matrix(n, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_linear_data() {
        let fit = fit_quadratic(&[(1.0, 3.0), (2.0, 5.0), (3.0, 7.0)]).unwrap();
        assert_relative_eq!(fit.coeffs.p, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.coeffs.q, 2.0, epsilon = 1e-12);
        assert!(fit.coeffs.r.abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn constant_data() {
        let fit = fit_quadratic(&[(1.0, 4.0), (2.0, 4.0), (3.0, 4.0)]).unwrap();
        assert_relative_eq!(fit.coeffs.p, 4.0, epsilon = 1e-12);
        assert!(fit.coeffs.q.abs() < 1e-12);
        assert!(fit.coeffs.r.abs() < 1e-12);
    }

    #[test]
    fn underdetermined_samples() {
        assert!(matches!(
            fit_quadratic(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(ProfileError::Underdetermined { samples: 2, .. })
        ));
        assert!(matches!(
            fit_quadratic(&[(1.0, 1.0), (1.0, 2.0), (2.0, 2.0), (2.0, 3.0)]),
            Err(ProfileError::Underdetermined {
                distinct_sizes: 2,
                ..
            })
        ));
    }

    #[test]
    fn negative_fit_rejected() {
        // Falling data extrapolates below zero before 10 MB.
        let probes = vec![
            PairSamples {
                src: NcpId(0),
                dst: NcpId(1),
                samples: vec![(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)],
            },
            PairSamples {
                src: NcpId(1),
                dst: NcpId(0),
                samples: vec![(1.0, 3.0), (2.0, 3.0), (3.0, 3.0)],
            },
        ];
        assert!(matches!(
            fit_latency_model(2, &probes),
            Err(ProfileError::NegativeTransfer { src: 0, dst: 1, .. })
        ));
    }

    #[test]
    fn missing_pair_rejected() {
        let probes = vec![PairSamples {
            src: NcpId(0),
            dst: NcpId(1),
            samples: vec![(1.0, 3.0), (2.0, 3.0), (3.0, 3.0)],
        }];
        assert!(matches!(
            fit_latency_model(2, &probes),
            Err(ProfileError::IncompleteLatency { nodes: 2 })
        ));
    }

    #[test]
    fn transfer_time_examples() {
        let m = LatencyModel::uniform(2, LatencyCoeffs::new(1.0, 2.0, 0.0)).unwrap();
        assert_eq!(m.transfer_time(NcpId(0), NcpId(1), 5.0).unwrap(), 11.0);
        assert_eq!(m.transfer_time(NcpId(1), NcpId(1), 5.0).unwrap(), 0.0);
        let m = LatencyModel::uniform(2, LatencyCoeffs::new(0.5, 0.1, 0.01)).unwrap();
        assert_relative_eq!(
            m.transfer_time(NcpId(0), NcpId(1), 10.0).unwrap(),
            2.5,
            epsilon = 1e-12
        );
        assert!(matches!(
            m.transfer_time(NcpId(0), NcpId(1), 0.5),
            Err(ProfileError::FileSizeOutOfRange(_))
        ));
        assert!(m.transfer_time(NcpId(0), NcpId(1), MAX_FILE_SIZE + 1.0).is_err());
    }

    #[test]
    fn csv_export_lists_distinct_pairs() {
        let m = LatencyModel::uniform(3, LatencyCoeffs::new(1.0, 0.0, 0.0)).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.starts_with("src,dst,p,q,r\n0,1,"));
    }
}

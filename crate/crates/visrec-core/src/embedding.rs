use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-length real vector; Euclidean distances between embeddings encode
/// visual (dis)similarity. Stored as 32-bit floats, L2-normalized when the
/// network config asks for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimMismatch("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding value".into()));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Euclidean distance with 64-bit accumulation over the 32-bit components.
pub fn euclidean_distance(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch(format!(
            "embedding dims {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(euclidean_f64(&a.values, &b.values))
}

#[inline]
pub(crate) fn euclidean_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        acc += d * d;
    }
    acc.sqrt()
}

/// Euclidean distance rounded to f32, the index's storage precision.
#[inline]
pub fn euclidean_distance_f32(a: &[f32], b: &[f32]) -> f32 {
    euclidean_f64(a, b) as f32
}

/// Hinge ranking loss over a distance gap.
///
/// Written in terms of `gap = D(q,n) - D(q,p)` so that `loss == 0` holds
/// exactly when `gap >= g` and the two hinge cases cannot disagree with the
/// arithmetic that produced them.
#[inline]
pub fn hinge(d_qp: f64, d_qn: f64, margin: f64) -> f64 {
    let gap = d_qn - d_qp;
    if gap >= margin {
        0.0
    } else {
        margin - gap
    }
}

/// Triplet hinge ranking loss: `max(0, g + D(q,p) - D(q,n))`.
pub fn triplet_loss(q: &Embedding, p: &Embedding, n: &Embedding, margin: f64) -> Result<f64> {
    if margin < 0.0 {
        return Err(Error::Config(format!("negative margin {margin}")));
    }
    let d_qp = euclidean_distance(q, p)?;
    let d_qn = euclidean_distance(q, n)?;
    Ok(hinge(d_qp, d_qn, margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn distance_identity_and_known_value() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[0.0, 1.0]);
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        let d = euclidean_distance(&a, &b).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn distance_dim_mismatch() {
        let a = emb(&[1.0, 0.0]);
        let b = emb(&[1.0, 0.0, 0.0]);
        assert!(euclidean_distance(&a, &b).is_err());
    }

    #[test]
    fn hinge_margin_satisfied() {
        assert_eq!(hinge(0.3, 0.9, 0.2), 0.0);
    }

    #[test]
    fn hinge_margin_violated() {
        let loss = hinge(0.9, 0.3, 0.2);
        assert!((loss - 0.8).abs() < 1e-12);
    }

    #[test]
    fn hinge_boundary_is_zero() {
        assert_eq!(hinge(0.5, 0.5, 0.0), 0.0);
    }

    #[test]
    fn unit_vectors_bounded_by_two() {
        let a = emb(&[0.6, 0.8]);
        let b = emb(&[-0.6, -0.8]);
        let d = euclidean_distance(&a, &b).unwrap();
        assert!(d <= 2.0 + 1e-6);
    }

    proptest! {
        /// Hinge case analysis: loss is zero exactly when the distance gap
        /// reaches the margin, and grows one-for-one past it.
        #[test]
        fn hinge_case_analysis(
            q in proptest::collection::vec(-1.0f32..1.0, 8),
            p in proptest::collection::vec(-1.0f32..1.0, 8),
            n in proptest::collection::vec(-1.0f32..1.0, 8),
            g in 0.0f64..0.5,
        ) {
            let (q, p, n) = (emb(&q), emb(&p), emb(&n));
            let d_qp = euclidean_distance(&q, &p).unwrap();
            let d_qn = euclidean_distance(&q, &n).unwrap();
            let loss = triplet_loss(&q, &p, &n, g).unwrap();
            if d_qn - d_qp >= g {
                prop_assert_eq!(loss, 0.0);
            } else {
                prop_assert!(loss > 0.0);
                prop_assert!((loss - (g + d_qp - d_qn)).abs() < 1e-12);
            }
        }

        #[test]
        fn distance_symmetry(
            a in proptest::collection::vec(-10.0f32..10.0, 16),
            b in proptest::collection::vec(-10.0f32..10.0, 16),
        ) {
            let (ea, eb) = (emb(&a), emb(&b));
            prop_assert_eq!(
                euclidean_distance(&ea, &eb).unwrap(),
                euclidean_distance(&eb, &ea).unwrap()
            );
        }
    }
}

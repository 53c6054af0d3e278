//! Query/frame fusion. The query vector is linearly projected to the frame
//! feature width in every mode, so the fusion operator is the only thing
//! that differs between modes.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::config::FusionMode;
use crate::error::{Error, Result};
use crate::nn::Linear;

/// `p = W·q + b`.
pub fn project_query(q: ArrayView1<f64>, projection: &Linear) -> Result<Array1<f64>> {
    projection.forward_vec(q)
}

/// Fuses every row of `features` with `p`:
/// none → `F_i`, sum → `F_i + p`, concat → `[F_i ∥ p]`, mult → `F_i ⊙ p`.
pub fn fuse(
    features: ArrayView2<f64>,
    p: ArrayView1<f64>,
    mode: FusionMode,
) -> Result<Array2<f64>> {
    let d = features.ncols();
    if p.len() != d {
        return Err(Error::shape(format!(
            "projected query has width {}, features {d}",
            p.len()
        )));
    }
    Ok(match mode {
        FusionMode::None => features.to_owned(),
        FusionMode::Sum => &features + &p,
        FusionMode::Mult => &features * &p,
        FusionMode::Concat => {
            let row = p.insert_axis(Axis(0));
            let tiled = row.broadcast((features.nrows(), d)).expect("broadcast row");
            concatenate![Axis(1), features, tiled]
        }
    })
}

/// Backward pass of [`fuse`]: returns `(∂L/∂F, ∂L/∂p)`.
pub fn fuse_backward(
    features: ArrayView2<f64>,
    p: ArrayView1<f64>,
    mode: FusionMode,
    grad_out: ArrayView2<f64>,
) -> (Array2<f64>, Array1<f64>) {
    let d = features.ncols();
    match mode {
        FusionMode::None => (grad_out.to_owned(), Array1::zeros(d)),
        FusionMode::Sum => (grad_out.to_owned(), grad_out.sum_axis(Axis(0))),
        FusionMode::Mult => (&grad_out * &p, (&grad_out * &features).sum_axis(Axis(0))),
        FusionMode::Concat => (
            grad_out.slice(ndarray::s![.., ..d]).to_owned(),
            grad_out.slice(ndarray::s![.., d..]).sum_axis(Axis(0)),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn feats() -> Array2<f64> {
        Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 * 0.7 - 2.0)
    }

    #[test]
    fn identities_are_exact() {
        let f = feats();
        assert_eq!(
            fuse(f.view(), Array1::zeros(3).view(), FusionMode::Sum).unwrap(),
            f
        );
        assert_eq!(
            fuse(f.view(), Array1::ones(3).view(), FusionMode::Mult).unwrap(),
            f
        );
        assert_eq!(
            fuse(f.view(), Array1::ones(3).view(), FusionMode::Concat)
                .unwrap()
                .ncols(),
            6
        );
        assert!(matches!(
            fuse(f.view(), Array1::ones(2).view(), FusionMode::Sum),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn projection_basics() {
        let lin = Linear::zeros(4, 3);
        assert_eq!(
            project_query(Array1::zeros(4).view(), &lin).unwrap(),
            Array1::<f64>::zeros(3)
        );
        let mut lin = Linear::zeros(4, 3);
        lin.weight = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let e1 = Array1::from(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            project_query(e1.view(), &lin).unwrap(),
            lin.weight.column(0)
        );
        assert!(project_query(Array1::zeros(5).view(), &lin).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let f = feats();
        let p = Array1::from(vec![0.3, -1.2, 0.8]);
        for mode in FusionMode::ALL {
            let w = Array2::from_shape_fn((5, mode.fused_width(3)), |(i, j)| {
                ((i + 2 * j) as f64).cos()
            });
            let loss = |f: &Array2<f64>, p: &Array1<f64>| {
                (fuse(f.view(), p.view(), mode).unwrap() * &w).sum()
            };
            let (gf, gp) = fuse_backward(f.view(), p.view(), mode, w.view());
            let h = 1e-6;
            for j in 0..3 {
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp[j] += h;
                pm[j] -= h;
                let num = (loss(&f, &pp) - loss(&f, &pm)) / (2.0 * h);
                assert!((num - gp[j]).abs() < 1e-6, "{mode:?} p[{j}]");
                let (mut fp, mut fm) = (f.clone(), f.clone());
                fp[[2, j]] += h;
                fm[[2, j]] -= h;
                let num = (loss(&fp, &p) - loss(&fm, &p)) / (2.0 * h);
                assert!((num - gf[[2, j]]).abs() < 1e-6, "{mode:?} F[2,{j}]");
            }
        }
    }

    proptest! {
        #[test]
        fn none_ignores_query_and_rows_are_independent(
            vals in proptest::collection::vec(-5.0f64..5.0, 12),
            p1 in proptest::collection::vec(-5.0f64..5.0, 3),
            p2 in proptest::collection::vec(-5.0f64..5.0, 3),
            mode_idx in 0usize..4,
        ) {
            let f = Array2::from_shape_vec((4, 3), vals).unwrap();
            let (p1, p2) = (Array1::from(p1), Array1::from(p2));
            prop_assert_eq!(
                fuse(f.view(), p1.view(), FusionMode::None).unwrap(),
                fuse(f.view(), p2.view(), FusionMode::None).unwrap()
            );
            let mode = FusionMode::ALL[mode_idx];
            let full = fuse(f.view(), p1.view(), mode).unwrap();
            prop_assert_eq!(full.ncols(), mode.fused_width(3));
            for i in 0..4 {
                let single = fuse(f.slice(ndarray::s![i..i + 1, ..]), p1.view(), mode).unwrap();
                prop_assert_eq!(single.row(0), full.row(i));
            }
        }
    }
}

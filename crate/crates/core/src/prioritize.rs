//! Ranking classes by the second-smallest Laplacian eigenvalue, and the
//! annotation-effort vs improvement curve that ranking induces.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::datamodel::ClusterModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedClass {
    pub class_id: String,
    pub lambda2: f64,
}

/// Ascending by λ₂, ties by class id. Models with fewer than two
/// eigenvalues are skipped.
pub fn rank_classes<'a>(models: impl IntoIterator<Item = &'a ClusterModel>) -> Vec<RankedClass> {
    let mut ranked: Vec<RankedClass> = models
        .into_iter()
        .filter_map(|m| {
            m.lambda2().map(|l| RankedClass {
                class_id: m.class_id.clone(),
                lambda2: l,
            })
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.lambda2
            .total_cmp(&b.lambda2)
            .then_with(|| a.class_id.cmp(&b.class_id))
    });
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction_annotated: f64,
    pub fraction_improvement: f64,
    /// Class added at this step; `None` for the origin.
    pub class_id: Option<String>,
    pub lambda2: Option<f64>,
}

/// Point `j` is `(j/N, Σ_{i≤j} impᵢ / Σ imp)`; a zero total gives `y ≡ 0`.
pub fn tradeoff_curve(
    ranked: &[RankedClass],
    improvements: &BTreeMap<String, f64>,
) -> Result<Vec<CurvePoint>> {
    let imps: Vec<f64> = ranked
        .iter()
        .map(|r| {
            improvements
                .get(&r.class_id)
                .copied()
                .ok_or_else(|| Error::MissingImprovement(r.class_id.clone()))
        })
        .collect::<Result<_>>()?;
    let total: f64 = imps.iter().sum();
    let n = ranked.len();
    let mut out = Vec::with_capacity(n + 1);
    out.push(CurvePoint {
        fraction_annotated: 0.0,
        fraction_improvement: 0.0,
        class_id: None,
        lambda2: None,
    });
    let mut cum = 0.0;
    for (j, (r, imp)) in ranked.iter().zip(&imps).enumerate() {
        cum += imp;
        out.push(CurvePoint {
            fraction_annotated: (j + 1) as f64 / n as f64,
            fraction_improvement: if total == 0.0 { 0.0 } else { cum / total },
            class_id: Some(r.class_id.clone()),
            lambda2: Some(r.lambda2),
        });
    }
    Ok(out)
}

/// CSV with header `fraction_annotated,fraction_improvement,class_id,lambda2`.
pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("fraction_annotated,fraction_improvement,class_id,lambda2\n");
    for p in curve {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.fraction_annotated,
            p.fraction_improvement,
            p.class_id.as_deref().unwrap_or(""),
            p.lambda2.map(|l| l.to_string()).unwrap_or_default()
        ));
    }
    s
}

/// Improvement fraction reached once `fraction` of the classes are annotated.
pub fn improvement_at(curve: &[CurvePoint], fraction: f64) -> f64 {
    curve
        .iter()
        .filter(|p| p.fraction_annotated <= fraction + 1e-12)
        .map(|p| p.fraction_improvement)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ClusterParams;
    use proptest::prelude::*;

    fn model(id: &str, l2: f64) -> ClusterModel {
        ClusterModel {
            class_id: id.into(),
            k: 2,
            eigenvalues: vec![0.0, l2],
            centroids: vec![vec![1.0], vec![1.0]],
            sizes: vec![1, 1],
            assignments: vec![0, 1],
            params: ClusterParams::default(),
        }
    }

    fn ids(r: &[RankedClass]) -> Vec<&str> {
        r.iter().map(|c| c.class_id.as_str()).collect()
    }

    #[test]
    fn ranks_by_lambda2_then_id() {
        let ms = [model("a", 0.9), model("b", 0.01), model("c", 0.4)];
        assert_eq!(ids(&rank_classes(&ms)), ["b", "c", "a"]);
        let ms = [model("z", 0.3), model("m", 0.3)];
        assert_eq!(ids(&rank_classes(&ms)), ["m", "z"]);
    }

    #[test]
    fn uniform_improvements_give_the_diagonal() {
        let ms: Vec<_> = ["a", "b", "c", "d"].iter().map(|i| model(i, 0.5)).collect();
        let ranked = rank_classes(&ms);
        let imps = ranked.iter().map(|r| (r.class_id.clone(), 2.0)).collect();
        let curve = tradeoff_curve(&ranked, &imps).unwrap();
        assert_eq!(curve.len(), 5);
        assert_eq!(curve[2].fraction_annotated, 0.5);
        assert_eq!(curve[2].fraction_improvement, 0.5);
    }

    #[test]
    fn concentrated_improvement_jumps_at_first_step() {
        let ranked = rank_classes(&[model("a", 0.1), model("b", 0.5), model("c", 0.9)]);
        let imps = [("a".into(), 3.0), ("b".into(), 0.0), ("c".into(), 0.0)].into();
        let curve = tradeoff_curve(&ranked, &imps).unwrap();
        assert_eq!(curve[1].fraction_improvement, 1.0);
        assert!((curve[1].fraction_annotated - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_total_and_missing_entries() {
        let ranked = rank_classes(&[model("a", 0.1), model("b", 0.5)]);
        let zero = [("a".into(), 0.0), ("b".into(), 0.0)].into();
        assert!(tradeoff_curve(&ranked, &zero)
            .unwrap()
            .iter()
            .all(|p| p.fraction_improvement == 0.0));
        let missing = [("a".into(), 1.0)].into();
        assert!(matches!(
            tradeoff_curve(&ranked, &missing),
            Err(Error::MissingImprovement(c)) if c == "b"
        ));
    }

    #[test]
    fn csv_layout() {
        let ranked = rank_classes(&[model("a", 0.25)]);
        let curve = tradeoff_curve(&ranked, &[("a".into(), 1.0)].into()).unwrap();
        assert_eq!(
            curve_to_csv(&curve),
            "fraction_annotated,fraction_improvement,class_id,lambda2\n0,0,,\n1,1,a,0.25\n"
        );
    }

    proptest! {
        #[test]
        fn monotone_from_origin_to_one(imps in prop::collection::vec(0.0f64..10.0, 1..20)) {
            let ms: Vec<_> = imps.iter().enumerate().map(|(i, _)| model(&format!("c{i:02}"), i as f64 * 0.01)).collect();
            let ranked = rank_classes(&ms);
            let map = ranked.iter().zip(&imps).map(|(r, &v)| (r.class_id.clone(), v)).collect();
            let curve = tradeoff_curve(&ranked, &map).unwrap();
            prop_assert_eq!(curve[0].fraction_improvement, 0.0);
            for w in curve.windows(2) {
                prop_assert!(w[1].fraction_improvement >= w[0].fraction_improvement - 1e-12);
            }
            let total: f64 = imps.iter().sum();
            if total > 0.0 {
                prop_assert!((curve.last().unwrap().fraction_improvement - 1.0).abs() < 1e-12);
            }
        }
    }
}

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Zero-sum family rescaled so the largest vector has norm `cap`.
pub(crate) fn zero_sum_family(r: &mut ChaCha8Rng, k: usize, dim: usize, cap: f64) -> Vec<Vec<f64>> {
    let mut vs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let mean: Vec<f64> = (0..dim).map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / k as f64).collect();
    for v in &mut vs {
        for j in 0..dim {
            v[j] -= mean[j];
        }
    }
    let m = vs.iter().map(|v| norm(v)).fold(0.0, f64::max);
    for v in &mut vs {
        v.iter_mut().for_each(|x| *x *= cap / m);
    }
    vs
}

fn ball_family(r: &mut ChaCha8Rng, k: usize, dim: usize, eps: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            let n = norm(&v);
            let s = eps * r.gen_range(0.0..1.0f64).powf(1.0 / dim as f64) / n;
            v.into_iter().map(|x| x * s).collect()
        })
        .collect()
}

/// Prefix norms recomputed from scratch for each prefix.
fn prefix_norms(vs: &[Vec<f64>], order: &[usize]) -> Vec<f64> {
    (1..=order.len())
        .map(|m| {
            let mut s = vec![0.0; vs[0].len()];
            for &i in &order[..m] {
                for (a, b) in s.iter_mut().zip(&vs[i]) {
                    *a += b;
                }
            }
            norm(&s)
        })
        .collect()
}

fn is_permutation(order: &[usize], k: usize) -> bool {
    let mut seen = vec![false; k];
    order.len() == k && order.iter().all(|&i| i < k && !std::mem::replace(&mut seen[i], true))
}

#[test]
fn signed_axes() {
    let vs = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    let inst = SteinitzInstance::new(vs.clone()).unwrap();
    let res = rearrange_zero_sum(&inst).unwrap();
    assert!(is_permutation(&res.indices, 4));
    let p = prefix_norms(&vs, &res.indices);
    assert!(p.iter().all(|&x| x <= 2.0 + 1e-12), "{p:?}");
    assert!(p[3] < 1e-15);
    assert_eq!(res.effective_dim, 2);
    assert_eq!(res.certified_bound, 2.0);
}

#[test]
fn antipodal_pair() {
    let vs = vec![vec![0.3, -0.4, 0.0], vec![-0.3, 0.4, 0.0]];
    let res = rearrange_zero_sum(&SteinitzInstance::new(vs.clone()).unwrap()).unwrap();
    let p = prefix_norms(&vs, &res.indices);
    assert!((p[0] - 0.5).abs() < 1e-15 && p[1] == 0.0);
    assert!(res.certified());
}

#[test]
fn random_unit_vectors_in_three_dimensions() {
    let mut r = rng(1);
    let vs = zero_sum_family(&mut r, 200, 3, 1.0);
    let inst = SteinitzInstance::new(vs.clone()).unwrap();
    let res = rearrange_zero_sum(&inst).unwrap();
    assert!(is_permutation(&res.indices, 200));
    let worst = prefix_norms(&vs, &res.indices).into_iter().fold(0.0, f64::max);
    assert!(worst <= 3.0 + 1e-6, "{worst}");
    assert!((worst - res.achieved_deviation).abs() < 1e-12);
}

#[test]
fn non_zero_sum_is_infeasible() {
    let inst = SteinitzInstance::new(vec![vec![1.0, 0.0], vec![0.5, 0.0]]).unwrap();
    assert!(matches!(rearrange_zero_sum(&inst), Err(Error::InfeasibleInput(_))));
}

#[test]
fn instance_validation() {
    assert!(SteinitzInstance::new(vec![]).is_err());
    assert!(SteinitzInstance::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    assert!(SteinitzInstance::new(vec![vec![f64::NAN]]).is_err());
    let inst = SteinitzInstance::new(vec![vec![3.0, 4.0], vec![0.0, 1.0]]).unwrap();
    assert_eq!(inst.cap(), 5.0);
    assert_eq!(inst.sum(), &[3.0, 5.0]);
    assert!(subset_select(&inst, 1.5).is_err());
}

#[test]
fn equal_copies() {
    let vs = vec![vec![0.1, 0.0]; 10];
    let inst = SteinitzInstance::new(vs).unwrap();
    let res = subset_select(&inst, 0.3).unwrap();
    assert_eq!(res.indices.len(), 3);
    assert!(res.achieved_deviation < 1e-12);
    assert!(res.certified_bound <= 2.0 * 0.1 + 1e-15);
}

#[test]
fn zero_sum_target_is_origin() {
    let mut r = rng(2);
    let vs = zero_sum_family(&mut r, 30, 2, 0.2);
    let inst = SteinitzInstance::new(vs).unwrap();
    for t in [0.1, 0.5, 0.9] {
        let res = subset_select(&inst, t).unwrap();
        assert!(res.achieved_deviation <= 2.0 * 0.2 + 1e-6);
    }
}

#[test]
fn five_hundred_small_vectors() {
    let mut r = rng(3);
    let vs = ball_family(&mut r, 500, 4, 0.05);
    let inst = SteinitzInstance::new(vs.clone()).unwrap();
    let res = subset_select(&inst, 0.37).unwrap();
    let mut acc = vec![0.0; 4];
    for &i in &res.indices {
        for j in 0..4 {
            acc[j] += vs[i][j];
        }
    }
    for j in 0..4 {
        acc[j] -= 0.37 * inst.sum()[j];
    }
    let dev = norm(&acc);
    assert!(dev <= 4.0 * 0.05 + 1e-6, "{dev}");
    assert!((dev - res.achieved_deviation).abs() < 1e-12);
}

#[test]
fn full_and_empty_fractions() {
    let mut r = rng(4);
    let inst = SteinitzInstance::new(ball_family(&mut r, 20, 3, 0.1)).unwrap();
    let res = subset_select(&inst, 1.0).unwrap();
    assert_eq!(res.indices, (0..20).collect::<Vec<_>>());
    assert!(res.achieved_deviation < 1e-14);
    assert!(subset_select(&inst, 0.0).unwrap().indices.is_empty());
}

#[test]
fn near_optimal_against_exhaustive_search() {
    let mut r = rng(5);
    for _ in 0..5 {
        let k = 14;
        let dim = 3;
        let vs = ball_family(&mut r, k, dim, 0.3);
        let inst = SteinitzInstance::new(vs).unwrap();
        let t = r.gen_range(0.1..0.9);
        let res = subset_select(&inst, t).unwrap();
        let opt = (0..1u32 << k)
            .map(|mask| {
                let s: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
                inst.subset_deviation(&s, t)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(res.achieved_deviation <= opt + dim as f64 * inst.cap() + 1e-12);
        assert!(res.achieved_deviation >= opt - 1e-12);
    }
}

#[test]
fn padded_vectors_keep_the_span_bound() {
    let mut r = rng(6);
    let base = zero_sum_family(&mut r, 60, 2, 1.0);
    // embed R^2 isometrically into R^6 along two orthonormal directions
    let q1 = [0.5, 0.5, 0.5, 0.5, 0.0, 0.0];
    let q2 = [0.5, -0.5, 0.5, -0.5, 0.0, 0.0];
    let padded: Vec<Vec<f64>> = base
        .iter()
        .map(|v| (0..6).map(|j| v[0] * q1[j] + v[1] * q2[j]).collect())
        .collect();
    let inst = SteinitzInstance::new(padded.clone()).unwrap();
    assert_eq!(inst.rank(), 2);
    let res = rearrange_zero_sum(&inst).unwrap();
    assert_eq!(res.effective_dim, 2);
    assert!(res.achieved_deviation <= 2.0 + 1e-6);

    let sel = subset_select(&SteinitzInstance::new(ball_family(&mut r, 80, 2, 0.1)).unwrap(), 0.4).unwrap();
    assert!(sel.certified_bound <= 0.2 + 1e-15);
}

#[test]
fn array_of_equal_splits() {
    let v = vec![0.6, -0.8, 0.0];
    let rows: Vec<SteinitzInstance> = (1..=6)
        .map(|i| {
            let n = 1usize << i;
            SteinitzInstance::new(vec![v.iter().map(|x| x / n as f64).collect(); n]).unwrap()
        })
        .collect();
    let out = array_select(&rows, 0.5, Some(&v)).unwrap();
    assert!(out.caps_decreasing);
    let devs: Vec<f64> = out.deviations().into_iter().map(Option::unwrap).collect();
    for (i, row) in out.rows.iter().enumerate() {
        let row = row.as_ref().unwrap();
        let n = (1usize << (i + 1)) as f64;
        assert!(row.deviation <= 3.0 * 1.0 / n + 1e-12);
        assert!(row.deviation <= row.budget + 1e-6);
    }
    assert!(devs.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn array_with_noise() {
    let mut r = rng(7);
    let v = vec![1.0, 0.5];
    let rows: Vec<SteinitzInstance> = (1..=6)
        .map(|i| {
            let n = 1usize << (i + 1);
            let noise = 1.0 / (n * n) as f64;
            let vs = (0..n)
                .map(|_| v.iter().map(|x| x / n as f64 + noise * r.gen_range(-1.0..1.0)).collect())
                .collect();
            SteinitzInstance::new(vs).unwrap()
        })
        .collect();
    let out = array_select(&rows, 0.25, Some(&v)).unwrap();
    for row in &out.rows {
        let row = row.as_ref().unwrap();
        assert!(row.deviation <= row.budget + 1e-6);
    }
    let devs: Vec<f64> = out.deviations().into_iter().map(Option::unwrap).collect();
    assert!(devs.last().unwrap() < &0.05);
    assert!(devs.last().unwrap() < &devs[0]);

    let single = array_select(&rows[..1], 0.25, None).unwrap();
    let direct = subset_select(&rows[0], 0.25).unwrap();
    assert_eq!(single.rows[0].as_ref().unwrap().selection, direct);
}

#[test]
fn csv_and_json() {
    let text = "# header comment\n1.0, 0.0\n-1.0,0\n\n0.5 ,0.5\n";
    let inst = SteinitzInstance::from_csv(text.as_bytes()).unwrap();
    assert_eq!(inst.len(), 3);
    assert_eq!(inst.vectors()[2], vec![0.5, 0.5]);
    assert!(SteinitzInstance::from_csv("1,x\n".as_bytes()).is_err());

    let json = serde_json::to_string(&inst).unwrap();
    assert_eq!(json, r#"{"dim":2,"vectors":[[1.0,0.0],[-1.0,0.0],[0.5,0.5]]}"#);
    let back: SteinitzInstance = serde_json::from_str(&json).unwrap();
    assert_eq!(back, inst);
    assert!(serde_json::from_str::<SteinitzInstance>(r#"{"dim":3,"vectors":[[1.0]]}"#).is_err());

    let res = subset_select(&inst, 0.5).unwrap();
    let j = serde_json::to_string(&res).unwrap();
    assert_eq!(serde_json::from_str::<SelectionResult>(&j).unwrap(), res);
}

#[test]
fn null_vector_solves_system() {
    let a = vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 1.0]];
    let z = null_vector(a.clone(), 3);
    for row in &a {
        assert!(dot(row, &z).abs() < 1e-14);
    }
    assert!((norm(&z) - 1.0).abs() < 1e-14);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn prefix_bound_certificate(seed in any::<u64>(), k in 2usize..120, dim in 1usize..=6) {
            let mut r = rng(seed);
            let vs = zero_sum_family(&mut r, k, dim, 1.0);
            let inst = SteinitzInstance::new(vs.clone()).unwrap();
            let res = rearrange_zero_sum(&inst).unwrap();
            prop_assert!(is_permutation(&res.indices, k));
            let worst = prefix_norms(&vs, &res.indices).into_iter().fold(0.0, f64::max);
            prop_assert!(worst <= dim as f64 + 1e-6);
            prop_assert!(res.certified());
        }

        #[test]
        fn subset_bound(seed in any::<u64>(), k in 1usize..150, dim in 1usize..=6, t in 0.0f64..=1.0, eps in 0.01f64..2.0) {
            let mut r = rng(seed);
            let inst = SteinitzInstance::new(ball_family(&mut r, k, dim, eps)).unwrap();
            let res = subset_select(&inst, t).unwrap();
            prop_assert!(res.achieved_deviation <= dim as f64 * inst.cap() + 1e-6);
            prop_assert!(res.certified());
            let mut sorted = res.indices.clone();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), res.indices.len());
        }
    }
}

use loanlens_core::analysis::{
    kruskal_wallis, kruskal_wallis_with, mann_whitney_u, mann_whitney_u_with, pearson_r, steel_dwass,
    studentized_range_cdf, study_report, summarize_sessions, ExactPolicy, Measure, StudyReport,
};
use loanlens_core::culture::{assign_groups, Dimension, ScoreMatrix};
use loanlens_core::simulate::{simulate_study, StudyCohort};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-9;

/// Midranks by counting, O(n^2).
fn ranks_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn h_oracle(groups: &[Vec<f64>]) -> f64 {
    let pooled: Vec<f64> = groups.concat();
    let n = pooled.len() as f64;
    let r = ranks_oracle(&pooled);
    let mut start = 0;
    let mut h = 0.0;
    for g in groups {
        let rbar = r[start..start + g.len()].iter().sum::<f64>() / g.len() as f64;
        h += g.len() as f64 * (rbar - (n + 1.0) / 2.0).powi(2);
        start += g.len();
    }
    h *= 12.0 / (n * (n + 1.0));
    let mut distinct = pooled.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let ties: f64 = distinct
        .iter()
        .map(|x| {
            let t = pooled.iter().filter(|y| *y == x).count() as f64;
            t * t * t - t
        })
        .sum();
    let c = 1.0 - ties / (n * n * n - n);
    if c <= 0.0 {
        0.0
    } else {
        h / c
    }
}

fn u_oracle(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .flat_map(|a| {
            y.iter().map(move |b| {
                if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                }
            })
        })
        .sum()
}

/// Calls `f` with every assignment of `pooled` into groups of `sizes`.
fn assignments(pooled: &[f64], sizes: &[usize], f: &mut dyn FnMut(&[Vec<f64>])) {
    fn go(i: usize, pooled: &[f64], caps: &mut [usize], cur: &mut Vec<Vec<f64>>, f: &mut dyn FnMut(&[Vec<f64>])) {
        if i == pooled.len() {
            f(cur);
            return;
        }
        for g in 0..caps.len() {
            if caps[g] > 0 {
                caps[g] -= 1;
                cur[g].push(pooled[i]);
                go(i + 1, pooled, caps, cur, f);
                cur[g].pop();
                caps[g] += 1;
            }
        }
    }
    let mut caps = sizes.to_vec();
    let mut cur = vec![Vec::new(); sizes.len()];
    go(0, pooled, &mut caps, &mut cur, f);
}

fn sample(rng: &mut ChaCha8Rng, n: usize, tie_heavy: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if tie_heavy {
                rng.random_range(0..4) as f64
            } else {
                (rng.random::<f64>() * 1000.0).round() / 10.0
            }
        })
        .collect()
}

#[test]
fn mann_whitney_exact_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for nx in 1..=6 {
        for ny in 1..=6 {
            for tie_heavy in [false, true] {
                let x = sample(&mut rng, nx, tie_heavy);
                let y = sample(&mut rng, ny, tie_heavy);
                let got = mann_whitney_u(&x, &y).unwrap();
                assert!(got.method.contains("exact"));
                let u = u_oracle(&x, &y);
                assert!((got.statistic - u).abs() < EPS);
                let centre = (nx * ny) as f64 / 2.0;
                let d = (u - centre).abs();
                let pooled = [x.clone(), y.clone()].concat();
                let (mut hit, mut total) = (0.0, 0.0);
                assignments(&pooled, &[nx, ny], &mut |g| {
                    total += 1.0;
                    if (u_oracle(&g[0], &g[1]) - centre).abs() >= d - EPS {
                        hit += 1.0;
                    }
                });
                // ordered assignments overcount every subset equally
                let p = hit / total;
                assert!((got.p_value - p).abs() < EPS, "{x:?} {y:?}: {} vs {p}", got.p_value);
            }
        }
    }
}

#[test]
fn kruskal_wallis_exact_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut shapes: Vec<Vec<usize>> = Vec::new();
    for a in 1..=6 {
        for b in a..=6 {
            shapes.push(vec![a, b]);
        }
    }
    for a in 1..=4 {
        for b in a..=4 {
            for c in b..=4 {
                shapes.push(vec![a, b, c]);
            }
        }
    }
    shapes.push(vec![2, 2, 2, 2]);
    shapes.push(vec![6, 5, 1]);
    for sizes in shapes {
        for tie_heavy in [false, true] {
            let groups: Vec<Vec<f64>> = sizes.iter().map(|&s| sample(&mut rng, s, tie_heavy)).collect();
            let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
            let got = kruskal_wallis(&refs).unwrap();
            assert!(got.method.contains("exact"));
            let h = h_oracle(&groups);
            assert!((got.statistic - h).abs() < EPS, "{sizes:?}");
            let (mut hit, mut total) = (0.0, 0.0);
            assignments(&groups.concat(), &sizes, &mut |g| {
                total += 1.0;
                if h_oracle(g) >= h - EPS {
                    hit += 1.0;
                }
            });
            let p = hit / total;
            assert!((got.p_value - p).abs() < EPS, "{groups:?}: {} vs {p}", got.p_value);
        }
    }
}

#[test]
fn two_group_kruskal_agrees_with_mann_whitney() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..20 {
        let (nx, ny) = if i < 10 {
            (rng.random_range(2..=8), rng.random_range(2..=8))
        } else {
            (40, 35)
        };
        let x = sample(&mut rng, nx, i % 2 == 0);
        let y: Vec<f64> = sample(&mut rng, ny, i % 2 == 0).iter().map(|v| v + 0.5).collect();
        let mw = mann_whitney_u(&x, &y).unwrap();
        let kw = kruskal_wallis(&[&x, &y]).unwrap();
        let tol = if mw.method.contains("exact") && kw.method.contains("exact") {
            EPS
        } else {
            0.02
        };
        assert!(
            (mw.p_value - kw.p_value).abs() <= tol,
            "{}: {} vs {}",
            i,
            mw.p_value,
            kw.p_value
        );
    }
}

#[test]
fn asymptotic_paths_agree_with_exact_on_moderate_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let forced = ExactPolicy {
        mann_whitney_max_total: 0,
        kruskal_max_assignments: 0,
    };
    for _ in 0..10 {
        let x = sample(&mut rng, 9, false);
        let y: Vec<f64> = sample(&mut rng, 9, false).iter().map(|v| v + 20.0).collect();
        let exact = mann_whitney_u(&x, &y).unwrap();
        let approx = mann_whitney_u_with(&x, &y, &forced).unwrap();
        assert_eq!(exact.statistic, approx.statistic);
        assert!(
            (exact.p_value - approx.p_value).abs() < 0.03,
            "{x:?} {y:?} {} vs {}",
            exact.p_value,
            approx.p_value
        );
        let kw_exact = kruskal_wallis(&[&x, &y]).unwrap();
        let kw_chi = kruskal_wallis_with(&[&x, &y], &forced).unwrap();
        assert!(kw_chi.method.contains("chi"));
        // chi-squared has no continuity correction, so it trails the exact
        // tail a little further than the normal approximation does
        assert!(
            (kw_exact.p_value - kw_chi.p_value).abs() < 0.05,
            "{x:?} {y:?} {} vs {}",
            kw_exact.p_value,
            kw_chi.p_value
        );
    }
}

#[test]
fn reference_values_from_an_independent_implementation() {
    // scipy.stats 1.15: kruskal, and mannwhitneyu with method exact/asymptotic
    let x = [79.1, 45.1, 59.3, 7.6, 44.0, 67.1, 57.8, 25.9, 69.6];
    let y = [31.3, 78.3, 66.4, 71.9, 73.2, 55.4, 107.8, 39.2, 58.2];
    let forced = ExactPolicy {
        mann_whitney_max_total: 0,
        kruskal_max_assignments: 0,
    };
    let kw = kruskal_wallis_with(&[&x, &y], &forced).unwrap();
    assert!((kw.statistic - 1.0311890838206494).abs() < 1e-12);
    assert!((kw.p_value - 0.3098795496397732).abs() < 1e-12);
    let exact = mann_whitney_u(&x, &y).unwrap();
    assert_eq!(exact.statistic, 29.0);
    assert!((exact.p_value - 0.34010695187165774).abs() < 1e-12);
    let approx = mann_whitney_u_with(&x, &y, &forced).unwrap();
    // normal tail implementations differ in the last digits
    assert!((approx.p_value - 0.331387096247615).abs() < 1e-9, "{}", approx.p_value);
}

#[test]
fn rank_tests_ignore_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..10 {
        let g: Vec<Vec<f64>> = (0..3).map(|_| sample(&mut rng, 12, true)).collect();
        let t: Vec<Vec<f64>> = g
            .iter()
            .map(|v| v.iter().map(|x| (x * 0.7).exp() + 3.0).collect())
            .collect();
        let a = kruskal_wallis(&[&g[0], &g[1], &g[2]]).unwrap();
        let b = kruskal_wallis(&[&t[0], &t[1], &t[2]]).unwrap();
        assert_eq!(a.statistic, b.statistic);
        assert_eq!(a.p_value, b.p_value);
        let m1 = mann_whitney_u(&g[0], &g[1]).unwrap();
        let m2 = mann_whitney_u(&t[0], &t[1]).unwrap();
        assert_eq!((m1.statistic, m1.p_value), (m2.statistic, m2.p_value));
    }
}

#[test]
fn pearson_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for n in 3..=20 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-2.0..2.0)).collect();
        let nf = n as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        let r = (nf * sxy - sx * sy) / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
        let got = pearson_r(&x, &y).unwrap();
        assert!((got.statistic - r).abs() < 1e-12, "n={n}: {} vs {r}", got.statistic);
        assert!(got.p_value > 0.0 && got.p_value <= 1.0);
    }
    // r = 0.5 on n = 6 gives t = 1.1547 on 4 df; two-sided p = 0.3125
    let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let y = [2.0, 1.0, 4.0, 3.0, 1.0, 6.0];
    let got = pearson_r(&x, &y).unwrap();
    let r = got.statistic;
    let t = r * (4.0 / (1.0 - r * r)).sqrt();
    assert!(t > 0.0);
    assert!(pearson_r(&x, &[1.0; 6]).is_err());
}

#[test]
fn studentized_range_reference_points() {
    // Upper 5% points of the studentized range with infinite df.
    for (k, q) in [(2, 2.772), (3, 3.314), (4, 3.633), (12, 4.622)] {
        let upper = 1.0 - studentized_range_cdf(q, k);
        assert!((upper - 0.05).abs() < 1e-3, "k={k}: {upper}");
    }
    let groups: Vec<Vec<f64>> = vec![
        vec![1.0, 2.0, 3.0, 4.0],
        vec![11.0, 12.0, 13.0, 14.0],
        vec![2.5, 3.5, 1.5, 0.5],
    ];
    let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    let pairs = steel_dwass(&refs).unwrap();
    assert_eq!(pairs.len(), 3);
    assert!(pairs.iter().all(|p| (0.0..=1.0).contains(&p.p_value)));
}

fn study(effect: Option<(Dimension, f64)>, seed: u64) -> StudyReport {
    let matrix = ScoreMatrix::bundled();
    let ids: Vec<String> = (0..100).map(|i| format!("A{i:04}")).collect();
    let cohort = StudyCohort {
        seed,
        effect,
        ..StudyCohort::default()
    };
    let records = simulate_study(&cohort, &matrix, &ids);
    let sessions = summarize_sessions(&records);
    assert_eq!(sessions.len(), 200);
    let pairs: Vec<(String, String)> = sessions
        .iter()
        .map(|s| (s.session_id.clone(), s.country.clone().unwrap()))
        .collect();
    let groupings = assign_groups(&pairs, &matrix, &matrix.dimension_means());
    study_report(&sessions, &groupings, None, &[])
}

fn ua_ratio_p(r: &StudyReport) -> f64 {
    let t = r
        .tables
        .iter()
        .find(|t| t.dimension == Dimension::UncertaintyAvoidance)
        .unwrap();
    let m = t
        .measures
        .iter()
        .find(|m| m.measure == Measure::UnfairnessRatio)
        .unwrap();
    m.test.as_ref().unwrap().p_value
}

#[test]
fn planted_uncertainty_avoidance_effect_is_detected() {
    for seed in 1..=5 {
        let r = study(Some((Dimension::UncertaintyAvoidance, 0.15)), seed);
        let p = ua_ratio_p(&r);
        assert!(p < 0.05, "seed {seed}: p = {p}");
        assert!(r
            .significant_contrasts()
            .iter()
            .any(|(d, m, _)| *d == Dimension::UncertaintyAvoidance && *m == Measure::UnfairnessRatio));
        // post ratings fall with the unfairness ratio
        assert!(r.rating_correlation.as_ref().unwrap().statistic < 0.0);
    }
}

#[test]
fn null_cohort_rarely_flags_uncertainty_avoidance() {
    let false_positives = (1..=20).filter(|&seed| ua_ratio_p(&study(None, seed)) < 0.05).count();
    assert!(false_positives <= 4, "{false_positives}/20");
}

#[test]
fn report_round_trips_through_json() {
    let r = study(Some((Dimension::PowerDistance, 0.1)), 3);
    let json = serde_json::to_string(&r).unwrap();
    let back: StudyReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    let text = r.to_string();
    assert!(text.contains("UA"));
}

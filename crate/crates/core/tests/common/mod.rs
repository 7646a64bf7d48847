//! Independent oracles and generators shared by the integration tests and the
//! acceptance suite. Nothing here calls the code under test except to read
//! its inputs.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use valgauge::lexical::WeightedCorpus;
use valgauge::verifier::{mean_loss, TrainingExample, VerifierParams};
use valgauge::{validate_profile, ValueActivation, ValueDimension, ValueProfile, NUM_VALUES};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method,
/// potentials form). Returns the total cost.
pub fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

/// W1 between two uniform empirical measures by brute-force transport: each
/// point is split into equal units so both sides have lcm(n, m) units, then
/// the optimal assignment is solved exactly.
pub fn brute_w1(p: &[f64], q: &[f64]) -> f64 {
    let l = p.len() / gcd(p.len(), q.len()) * q.len();
    let expand = |xs: &[f64]| -> Vec<f64> {
        let reps = l / xs.len();
        xs.iter().flat_map(|&x| std::iter::repeat_n(x, reps)).collect()
    };
    let (a, b) = (expand(p), expand(q));
    let cost: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (x - y).abs()).collect()).collect();
    assignment_cost(&cost) / l as f64
}

fn quantile(sorted: &[f64], u: f64) -> f64 {
    let n = sorted.len();
    let i = ((u * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[i]
}

/// Midpoint-rule integral of |F⁻¹_p(u) − F⁻¹_q(u)| over (0, 1).
pub fn fine_grid_w1(p: &[f64], q: &[f64], points: usize) -> f64 {
    let mut a = p.to_vec();
    let mut b = q.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let h = 1.0 / points as f64;
    (0..points)
        .map(|i| {
            let u = (i as f64 + 0.5) * h;
            (quantile(&a, u) - quantile(&b, u)).abs()
        })
        .sum::<f64>()
        * h
}

/// Minimum over cyclic rotations of `obs` of the number of pairs that appear
/// in opposite relative order in `gt`. Quadratic pair scan per rotation.
pub fn brute_circular_distance(obs: &[usize], gt: &[usize]) -> usize {
    let n = obs.len();
    let pos = |x: usize| gt.iter().position(|&g| g == x).expect("same labels");
    (0..n)
        .map(|r| {
            let rot: Vec<usize> = (0..n).map(|i| obs[(i + r) % n]).collect();
            let mut inv = 0;
            for i in 0..n {
                for j in i + 1..n {
                    if pos(rot[i]) > pos(rot[j]) {
                        inv += 1;
                    }
                }
            }
            inv
        })
        .min()
        .expect("n >= 1")
}

pub fn random_permutation(n: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(r);
    v
}

pub fn dims(idx: &[usize]) -> Vec<ValueDimension> {
    idx.iter()
        .map(|&i| ValueDimension::from_index(i).expect("index < 10"))
        .collect()
}

/// S(w, k) by explicit summation over every (word, document) pair.
pub fn double_loop_relevance(w: &WeightedCorpus, acts: &[ValueActivation], eps: f64) -> Vec<[f64; NUM_VALUES]> {
    let mut out = Vec::new();
    for word in &w.vocabulary {
        let mut row = [0.0; NUM_VALUES];
        for (k, slot) in row.iter_mut().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, act) in acts.iter().enumerate() {
                let t = w.weight(word, i);
                num += t * act.weights()[k];
                den += t;
            }
            *slot = num / (den + eps);
        }
        out.push(row);
    }
    out
}

pub fn random_profile(r: &mut impl Rng) -> ValueProfile {
    let raw: Vec<f64> = (0..NUM_VALUES).map(|_| r.random_range(-1.0..=1.0)).collect();
    validate_profile(&raw).expect("in range")
}

pub fn random_activation(r: &mut impl Rng) -> ValueActivation {
    let raw: Vec<f64> = (0..NUM_VALUES).map(|_| r.random_range(0.0..=1.0)).collect();
    ValueActivation::new(&raw).expect("in range")
}

pub fn random_vector(d: usize, scale: f64, r: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| r.random_range(-scale..=scale)).collect()
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_example(d: usize, r: &mut impl Rng) -> TrainingExample {
    TrainingExample {
        context: random_vector(d, 1.0, r),
        chosen: random_vector(d, 1.0, r),
        rejected: random_vector(d, 1.0, r),
        profile: random_profile(r),
    }
}

/// Central finite-difference gradient of the mean loss, one block at a time.
pub fn fd_gradient(params: &VerifierParams, examples: &[TrainingExample], h: f64) -> Vec<(String, Vec<f64>)> {
    let names: Vec<(String, usize)> = params.blocks().iter().map(|(n, b)| (n.clone(), b.len())).collect();
    let mut work = params.clone();
    let mut out = Vec::new();
    for (bi, (name, len)) in names.into_iter().enumerate() {
        let mut g = Vec::with_capacity(len);
        for j in 0..len {
            let orig = work.blocks()[bi].1[j];
            work.blocks_mut()[bi].1[j] = orig + h;
            let up = mean_loss(&work, examples).expect("finite");
            work.blocks_mut()[bi].1[j] = orig - h;
            let down = mean_loss(&work, examples).expect("finite");
            work.blocks_mut()[bi].1[j] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push((name, g));
    }
    out
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), or the absolute difference when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Pairs whose preferred action lies further along a hidden unit direction
/// than the other action, by a margin of at least 0.2. Contexts and profiles
/// are random and carry no signal.
pub fn planted_pairs(n: usize, d: usize, seed: u64) -> Vec<TrainingExample> {
    let direction = unit(random_vector(d, 1.0, &mut rng(0x5eed)));
    let mut r = rng(seed);
    let dot = |a: &[f64]| a.iter().zip(&direction).map(|(x, y)| x * y).sum::<f64>();
    (0..n)
        .map(|_| loop {
            let a = unit(random_vector(d, 1.0, &mut r));
            let b = unit(random_vector(d, 1.0, &mut r));
            let (da, db) = (dot(&a), dot(&b));
            if (da - db).abs() < 0.2 {
                continue;
            }
            let (chosen, rejected) = if da > db { (a, b) } else { (b, a) };
            break TrainingExample {
                context: unit(random_vector(d, 1.0, &mut r)),
                chosen,
                rejected,
                profile: random_profile(&mut r),
            };
        })
        .collect()
}

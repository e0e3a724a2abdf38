//! Shared gradient-check and oracle helpers for the integration tests.
#![allow(dead_code)]

use personaforge::encoders::{gru_step, ConvBlock, GruParams};
use personaforge::fusion::{bce_loss, direct_product, FusionParams};
use personaforge::gan::MappingParams;
use personaforge::impl_params;
use personaforge::tensor::{grad_check, grad_check_params, PoolMode, Tape, Tensor, Var};
use personaforge::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Check {
    pub name: &'static str,
    pub worst: f64,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values with magnitude at least `gap`, so piecewise-linear ops
/// are probed away from their kinks.
fn away(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng).map(|v| v.signum() * (gap + v.abs()))
}

/// Distinct values spaced well beyond the difference step, shuffled.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.3).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn weighted<F>(name: &'static str, points: Vec<Tensor>, seed: u64, op: F) -> Check
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = points.iter().map(|p| tape.constant(p.clone())).collect();
        let out = op(&mut tape, &vars).unwrap();
        tape.shape(out).to_vec()
    };
    let r = Tensor::uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0xabc));
    let worst = grad_check(&points, |tape, vars| {
        let out = op(tape, vars)?;
        let rv = tape.constant(r.clone());
        let p = tape.mul(out, rv)?;
        tape.sum(p)
    })
    .unwrap();
    Check { name, worst }
}

/// Finite-difference checks of every differentiable tape operation.
pub fn op_checks(seed: u64) -> Vec<Check> {
    let mut g = rng(seed);
    let mut u = |shape: &[usize]| Tensor::uniform(shape, -1.0, 1.0, &mut g);
    let mut out = vec![
        weighted("matmul", vec![u(&[3, 4]), u(&[4, 2])], seed, |t, v| t.matmul(v[0], v[1])),
        weighted("linear", vec![u(&[1, 4]), u(&[4, 3]), u(&[1, 3])], seed, |t, v| {
            t.linear(v[0], v[1], v[2])
        }),
        weighted("outer", vec![u(&[3]), u(&[4])], seed, |t, v| t.outer(v[0], v[1])),
        weighted("add", vec![u(&[2, 3]), u(&[2, 3])], seed, |t, v| t.add(v[0], v[1])),
        weighted("sub", vec![u(&[2, 3]), u(&[2, 3])], seed, |t, v| t.sub(v[0], v[1])),
        weighted("mul", vec![u(&[2, 3]), u(&[2, 3])], seed, |t, v| t.mul(v[0], v[1])),
        weighted("mul_scalar", vec![u(&[2, 3]), u(&[1])], seed, |t, v| t.mul(v[0], v[1])),
        weighted("affine", vec![u(&[5])], seed, |t, v| t.affine(v[0], 1.7, -0.3)),
        weighted("scale", vec![u(&[5])], seed, |t, v| t.scale(v[0], -2.5)),
        weighted("sigmoid", vec![u(&[6])], seed, |t, v| t.sigmoid(v[0])),
        weighted("tanh", vec![u(&[6])], seed, |t, v| t.tanh(v[0])),
        weighted("softplus", vec![u(&[6]).map(|x| 4.0 * x)], seed, |t, v| t.softplus(v[0])),
        weighted("ln", vec![u(&[6]).map(|x| 1.25 + 0.75 * x)], seed, |t, v| t.ln(v[0])),
        weighted("softmax_rows", vec![u(&[3, 4])], seed, |t, v| t.softmax(v[0], 1)),
        weighted("softmax_cols", vec![u(&[3, 4])], seed, |t, v| t.softmax(v[0], 0)),
        weighted("sum", vec![u(&[2, 3])], seed, |t, v| t.sum(v[0])),
        weighted("mean", vec![u(&[2, 3])], seed, |t, v| t.mean(v[0])),
        weighted("reshape", vec![u(&[2, 3])], seed, |t, v| t.reshape(v[0], &[3, 2])),
        weighted("concat", vec![u(&[2]), u(&[3])], seed, |t, v| t.concat(&[v[0], v[1], v[0]])),
        weighted("row", vec![u(&[3, 4])], seed, |t, v| t.row(v[0], 1)),
        weighted("mean_of", vec![u(&[2, 2]), u(&[2, 2]), u(&[2, 2])], seed, |t, v| {
            t.mean_of(&[v[0], v[1], v[2]])
        }),
        weighted("embedding", vec![u(&[5, 3])], seed, |t, v| t.embedding(v[0], &[1, 4, 1, 0])),
        weighted("conv2d_pad", vec![u(&[2, 5, 5]), u(&[3, 2, 3, 3])], seed, |t, v| {
            t.conv2d(v[0], v[1], 1, 1)
        }),
        weighted("conv2d_stride", vec![u(&[2, 5, 5]), u(&[2, 2, 3, 3])], seed, |t, v| {
            t.conv2d(v[0], v[1], 2, 0)
        }),
        weighted("upsample2x", vec![u(&[2, 2, 3])], seed, |t, v| t.upsample2x(v[0])),
        weighted("channel_add", vec![u(&[2, 3, 3]), u(&[2])], seed, |t, v| t.channel_add(v[0], v[1])),
        weighted("channel_mul", vec![u(&[2, 3, 3]), u(&[2])], seed, |t, v| t.channel_mul(v[0], v[1])),
        weighted("instance_norm", vec![u(&[2, 3, 3])], seed, |t, v| t.instance_norm(v[0], 1e-5)),
        weighted("global_avg_pool", vec![u(&[3, 2, 2])], seed, |t, v| t.global_avg_pool(v[0])),
        weighted("pool_avg", vec![u(&[2, 4, 4])], seed, |t, v| t.pool(v[0], PoolMode::Avg, 2, 1)),
    ];
    let mut g = rng(seed.wrapping_add(1));
    out.push(weighted("relu", vec![away(&[8], 0.05, &mut g)], seed, |t, v| t.relu(v[0])));
    out.push(weighted("leaky_relu", vec![away(&[8], 0.05, &mut g)], seed, |t, v| {
        t.leaky_relu(v[0], 0.2)
    }));
    // Bounds at +-0.5 with inputs kept 0.05 away from them.
    let c = away(&[8], 0.05, &mut g).map(|x| if x.abs() > 0.45 && x.abs() < 0.55 { x * 1.3 } else { x });
    out.push(weighted("clamp", vec![c], seed, |t, v| t.clamp(v[0], -0.5, 0.5)));
    out.push(weighted("pool_max", vec![distinct(&[2, 4, 4], &mut g)], seed, |t, v| {
        t.pool(v[0], PoolMode::Max, 2, 2)
    }));
    out
}

#[derive(Clone)]
struct GruPoint {
    gru: GruParams,
    x: Tensor,
    h: Tensor,
}
impl_params!(GruPoint { gru, x, h });

#[derive(Clone)]
struct ConvPoint {
    block: ConvBlock,
    x: Tensor,
}
impl_params!(ConvPoint { block, x });

#[derive(Clone)]
struct FusionPoint {
    head: FusionParams,
    t: Tensor,
    v: Tensor,
}
impl_params!(FusionPoint { head, t, v });

#[derive(Clone)]
struct MappingPoint {
    mapping: MappingParams,
    z: Tensor,
}
impl_params!(MappingPoint { mapping, z });

/// `sum(y * r)` with `r` a fixed pseudo-random tensor of `y`'s shape.
fn weights_sum(tape: &mut Tape<'_>, y: Var) -> Result<Var> {
    let r = Tensor::uniform(tape.shape(y), -1.0, 1.0, &mut rng(99));
    let wv = tape.constant(r);
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

/// Checks of the composites: GRU step, conv block, fusion head with BCE,
/// and the latent mapping network. Inputs and parameters are both probed.
pub fn composite_checks(seed: u64) -> Vec<Check> {
    let mut g = rng(seed);
    let mut out = Vec::new();

    let gp = GruPoint {
        gru: GruParams::init(3, 4, &mut g),
        x: Tensor::uniform(&[1, 3], -1.0, 1.0, &mut g),
        h: Tensor::uniform(&[1, 4], -0.5, 0.5, &mut g),
    };
    let worst = grad_check_params(&gp, |tape, p| {
        let x = tape.param(&p.x);
        let h = tape.param(&p.h);
        let y = gru_step(tape, x, h, &p.gru)?;
        weights_sum(tape, y)
    })
    .unwrap();
    out.push(Check { name: "gru_step", worst });

    let he = |shape: &[usize], fan: usize, g: &mut ChaCha8Rng| Tensor::randn(shape, (2.0 / fan as f64).sqrt(), g);
    let cp = ConvPoint {
        block: ConvBlock {
            k1: he(&[3, 2, 3, 3], 18, &mut g),
            b1: Tensor::uniform(&[3], 0.05, 0.2, &mut g),
            k2: he(&[2, 3, 3, 3], 27, &mut g),
            b2: Tensor::uniform(&[2], 0.05, 0.2, &mut g),
        },
        x: distinct(&[2, 4, 4], &mut g).map(|v| v * 3.0),
    };
    let worst = grad_check_params(&cp, |tape, p| {
        let x = tape.param(&p.x);
        let y = p.block.forward(tape, x)?;
        weights_sum(tape, y)
    })
    .unwrap();
    out.push(Check { name: "conv_block", worst });

    let mut head = FusionParams::init(16, 5, &mut g);
    head.hidden_b = Tensor::uniform(&[1, 5], 0.1, 0.3, &mut g);
    let fp = FusionPoint {
        head,
        t: Tensor::uniform(&[4], -1.0, 1.0, &mut g),
        v: Tensor::uniform(&[4], 0.1, 1.0, &mut g),
    };
    let labels: [bool; 4] = std::array::from_fn(|_| g.random());
    let worst = grad_check_params(&fp, |tape, p| {
        let t = tape.param(&p.t);
        let v = tape.param(&p.v);
        let f = direct_product(tape, t, v)?;
        let probs = p.head.forward(tape, f)?;
        bce_loss(tape, probs, labels)
    })
    .unwrap();
    out.push(Check { name: "fusion_bce", worst });

    let mut mapping = MappingParams::init(5, 4, 3, &mut g);
    for b in &mut mapping.biases {
        *b = Tensor::uniform(b.shape(), 0.05, 0.3, &mut g);
    }
    let mp = MappingPoint {
        mapping,
        z: Tensor::randn(&[5], 1.0, &mut g),
    };
    let worst = grad_check_params(&mp, |tape, p| {
        let z = tape.param(&p.z);
        let y = p.mapping.forward(tape, z)?;
        weights_sum(tape, y)
    })
    .unwrap();
    out.push(Check { name: "mapping_network", worst });
    out
}

// ---- naive loop oracles ---------------------------------------------------

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn naive_conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; o * oh * ow];
    for oc in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = 0.0;
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xx * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                s += x.data()[(ic * h + iy as usize) * w + ix as usize]
                                    * k.data()[((oc * c + ic) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
                out[(oc * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

pub fn naive_pool(x: &Tensor, window: usize, stride: usize, max: bool) -> Vec<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let vals = (0..window).flat_map(|ky| {
                    (0..window).map(move |kx| x.data()[(ch * h + y * stride + ky) * w + xx * stride + kx])
                });
                out.push(if max {
                    vals.fold(f64::NEG_INFINITY, f64::max)
                } else {
                    vals.sum::<f64>() / (window * window) as f64
                });
            }
        }
    }
    out
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation of matmul, conv2d and pooling from the naive loops
/// on random shapes drawn from `seed`.
pub fn oracle_errors(seed: u64) -> [f64; 3] {
    let mut g = rng(seed);
    let (m, k, n) = (g.random_range(1..7), g.random_range(1..7), g.random_range(1..7));
    let a = Tensor::uniform(&[m, k], -2.0, 2.0, &mut g);
    let b = Tensor::uniform(&[k, n], -2.0, 2.0, &mut g);
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let mm = tape.matmul(av, bv).unwrap();
    let e_mm = max_abs(tape.value(mm).data(), &naive_matmul(&a, &b));

    let stride: usize = g.random_range(1..3);
    let pad: usize = g.random_range(0..3);
    let (kh, kw): (usize, usize) = (g.random_range(1..4), g.random_range(1..4));
    let (oh, ow): (usize, usize) = (g.random_range(1..5), g.random_range(1..5));
    let h = ((oh - 1) * stride + kh).saturating_sub(2 * pad).max(1);
    let w = ((ow - 1) * stride + kw).saturating_sub(2 * pad).max(1);
    let c = g.random_range(1..4);
    let o = g.random_range(1..4);
    let x = Tensor::uniform(&[c, h, w], -1.0, 1.0, &mut g);
    let kern = Tensor::uniform(&[o, c, kh, kw], -1.0, 1.0, &mut g);
    let e_conv = match personaforge::tensor::kernels::ConvGeom::new(c, h, w, kh, kw, stride, pad) {
        Some(_) => {
            let mut tape = Tape::new();
            let (xv, kv) = (tape.constant(x.clone()), tape.constant(kern.clone()));
            let y = tape.conv2d(xv, kv, stride, pad).unwrap();
            max_abs(tape.value(y).data(), &naive_conv(&x, &kern, stride, pad))
        }
        None => 0.0,
    };

    let window = g.random_range(1..4);
    let pstride = g.random_range(1..3);
    let (ph, pw) = (g.random_range(1..4), g.random_range(1..4));
    let px = Tensor::uniform(
        &[g.random_range(1..3), (ph - 1) * pstride + window, (pw - 1) * pstride + window],
        -1.0,
        1.0,
        &mut g,
    );
    let mut e_pool: f64 = 0.0;
    for (mode, max) in [(PoolMode::Max, true), (PoolMode::Avg, false)] {
        let mut tape = Tape::new();
        let xv = tape.constant(px.clone());
        let y = tape.pool(xv, mode, window, pstride).unwrap();
        e_pool = e_pool.max(max_abs(tape.value(y).data(), &naive_pool(&px, window, pstride, max)));
    }
    [e_mm, e_conv, e_pool]
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Macro F1 from an explicit confusion table, with per-class F1 taken as
/// the harmonic mean of precision and recall in exact rationals.
pub fn brute_macro_f1(predictions: &[bool], truths: &[bool]) -> f64 {
    let mut table = [[0u64; 2]; 2];
    for (&p, &t) in predictions.iter().zip(truths) {
        table[p as usize][t as usize] += 1;
    }
    let class = |c: usize| -> f64 {
        let tp = table[c][c];
        let predicted = table[c][0] + table[c][1];
        let actual = table[0][c] + table[1][c];
        if tp == 0 {
            return 0.0;
        }
        // 2PR = 2tp^2 / (predicted * actual), P + R = tp (predicted + actual) / (predicted * actual)
        let (num, den) = (2 * tp * tp, tp * (predicted + actual));
        let g = gcd(num, den);
        (num / g) as f64 / (den / g) as f64
    };
    (class(1) + class(0)) / 2.0
}

// ---- cohort and ranking oracles --------------------------------------------

use personaforge::cohort::{Cohort, EngagementRecord, RankConfig};
use personaforge::mbti::MbtiType;
use personaforge::store::ContentAsset;

fn letters_apart(a: &MbtiType, b: &MbtiType) -> usize {
    a.code().chars().zip(b.code().chars()).filter(|(x, y)| x != y).count()
}

/// Cohort by scanning every user at each radius in increasing order.
pub fn oracle_cohort(anchor: &MbtiType, users: &[(String, MbtiType)], min_size: usize) -> (Vec<String>, u32) {
    let mut last = (Vec::new(), 0);
    for radius in 0..=1usize {
        let mut members: Vec<String> = Vec::new();
        for (id, t) in users {
            if letters_apart(anchor, t) <= radius && !members.contains(id) {
                members.push(id.clone());
            }
        }
        members.sort();
        last = (members, radius as u32);
        if last.0.len() >= min_size {
            break;
        }
    }
    last
}

/// Ranking by explicit per-asset sums and repeated selection of the best
/// remaining asset.
pub fn oracle_rank(
    cohort: &Cohort,
    industry: &str,
    assets: &[ContentAsset],
    log: &[EngagementRecord],
    now: u64,
    config: &RankConfig,
) -> Vec<(String, u64)> {
    let w = config.weights;
    let mut pool: Vec<(String, u64)> = Vec::new();
    for a in assets {
        let fresh = a.created_at <= now && now - a.created_at <= config.window_hours;
        if a.industry != industry || !fresh || pool.iter().any(|(id, _)| *id == a.id) {
            continue;
        }
        let mut score = 0;
        for r in log {
            let counted = cohort.cold_start || cohort.members.contains(&r.user_id);
            if counted && r.asset_id == a.id {
                score += w.clicks * r.clicks + w.likes * r.likes + w.engagements * r.engagements;
            }
        }
        pool.push((a.id.clone(), score));
    }
    let mut out = Vec::new();
    while !pool.is_empty() && out.len() < config.top_k {
        let mut best = 0;
        for i in 1..pool.len() {
            let (id, s) = &pool[i];
            let (bid, bs) = &pool[best];
            if s > bs || (s == bs && id < bid) {
                best = i;
            }
        }
        out.push(pool.remove(best));
    }
    out
}

/// Random instance with at most 25 entities (users plus assets).
pub fn random_market(seed: u64) -> (Vec<(String, MbtiType)>, Vec<ContentAsset>, Vec<EngagementRecord>, MbtiType) {
    let mut g = rng(seed);
    let all = MbtiType::all_types();
    // Draw types from a small neighbourhood so both radii occur.
    let anchor = all[g.random_range(0..16)];
    let near: Vec<MbtiType> = all.iter().copied().filter(|t| letters_apart(&anchor, t) <= 2).collect();
    let n_users = g.random_range(0..=12);
    let n_assets = g.random_range(1..=25 - n_users.max(1)).min(13);
    let users = (0..n_users)
        .map(|i| (format!("u{i:02}"), near[g.random_range(0..near.len())]))
        .collect();
    let industries = ["automobile", "fashion", "fast_food"];
    let assets: Vec<ContentAsset> = (0..n_assets)
        .map(|i| ContentAsset {
            id: format!("a{:02}", g.random_range(0..40)),
            brand_id: "brand".into(),
            industry: industries[g.random_range(0..3)].into(),
            image: format!("a{i}.png"),
            caption: String::new(),
            created_at: g.random_range(0..1000),
            tags: vec![],
        })
        .collect();
    let log = (0..g.random_range(0..60))
        .map(|_| EngagementRecord {
            user_id: format!("u{:02}", g.random_range(0..14)),
            asset_id: if assets.is_empty() {
                "none".into()
            } else {
                assets[g.random_range(0..assets.len())].id.clone()
            },
            clicks: g.random_range(0..3),
            likes: g.random_range(0..3),
            engagements: g.random_range(0..3),
            timestamp: 0,
        })
        .collect();
    (users, assets, log, anchor)
}

pub mod flow;
pub mod api;
pub mod gan;
pub mod feedback;
pub mod e2e;

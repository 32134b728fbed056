//! Brute-force oracles and reference fixtures shared by the integration
//! suites. Everything here favours obviousness over speed and reuses no
//! production arithmetic.
#![allow(dead_code)]

use std::f64::consts::SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use terraseg::costmap::{Cell, Costmap, TierCosts};
use terraseg::loss::LossConfig;
use terraseg::metrics::ConfusionAccumulator;
use terraseg::postprocess::CrfParams;
use terraseg::tensor_io::{encode_mask, MaskEncoding};
use terraseg::{ClassSchema, LabelMap, ProbTensor, RgbImage, TensorKind, Tier, IGNORE_INDEX};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-class validation results: (class, IoU %, pixel %), in printed order.
pub struct ValidationTable;

impl ValidationTable {
    pub const ROWS: [(&'static str, f64, f64); 10] = [
        ("Sky", 98.2, 37.84),
        ("Trees", 85.7, 4.07),
        ("Dry Grass", 70.2, 19.31),
        ("Lush Bushes", 68.4, 6.01),
        ("Landscape", 63.1, 23.72),
        ("Flowers", 62.1, 2.44),
        ("Rocks", 53.2, 1.21),
        ("Logs", 52.0, 0.07),
        ("Dry Bushes", 51.1, 1.10),
        ("Ground Clutter", 40.2, 4.23),
    ];
    pub const MEAN_ALL: f64 = 64.4;
    pub const MEAN_EXCLUDING_SKY_LANDSCAPE: f64 = 60.4;

    /// IoU fractions reordered to schema indices.
    pub fn iou_by_index(schema: &ClassSchema) -> Vec<f64> {
        let mut out = vec![f64::NAN; schema.len()];
        for (name, iou, _) in Self::ROWS {
            out[schema.index_of(name).expect("table class in schema")] = iou / 100.0;
        }
        out
    }

    /// A confusion matrix whose per-class IoUs reproduce the table to
    /// within ~1e-7. Class i leaks `e` pixels into class i+1 (cyclically),
    /// so each class has `e` false negatives and `e` false positives and
    /// `TP = 2e·iou/(1 − iou)`.
    pub fn synthetic_counts(schema: &ClassSchema) -> Vec<u64> {
        let c = schema.len();
        let e = 1_000_000u64;
        let ious = Self::iou_by_index(schema);
        let mut counts = vec![0u64; c * c];
        for i in 0..c {
            counts[i * c + i] = (2.0 * e as f64 * ious[i] / (1.0 - ious[i])).round() as u64;
            counts[i * c + (i + 1) % c] = e;
        }
        counts
    }
}

/// Traversability tiers as listed for the rover costmap.
pub const EXPECTED_TIERS: [(&str, Tier); 10] = [
    ("Landscape", Tier::Safe),
    ("Dry Grass", Tier::Safe),
    ("Sky", Tier::Safe),
    ("Lush Bushes", Tier::Caution),
    ("Flowers", Tier::Caution),
    ("Ground Clutter", Tier::Caution),
    ("Trees", Tier::Obstacle),
    ("Logs", Tier::Obstacle),
    ("Rocks", Tier::Obstacle),
    ("Dry Bushes", Tier::Obstacle),
];

// ---------------------------------------------------------------- fixtures

pub fn label_map(rows: &[&[u8]]) -> LabelMap {
    let width = rows[0].len();
    LabelMap::new(width, rows.len(), rows.concat()).unwrap()
}

pub fn random_map(rng: &mut ChaCha8Rng, width: usize, height: usize, classes: u8) -> LabelMap {
    LabelMap::new(width, height, (0..width * height).map(|_| rng.random_range(0..classes)).collect()).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, width: usize, height: usize) -> RgbImage {
    RgbImage::new(width, height, (0..width * height * 3).map(|_| rng.random()).collect()).unwrap()
}

pub fn random_logits(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, scale: f32) -> ProbTensor {
    let data = (0..c * h * w).map(|_| rng.random_range(-scale..=scale)).collect();
    ProbTensor::new(TensorKind::Logits, c, h, w, data).unwrap()
}

/// Random probabilities, optionally sharpened so argmaxes are distinct.
pub fn random_probs(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ProbTensor {
    let n = h * w;
    let mut data = vec![0f32; c * n];
    for i in 0..n {
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0f64).powi(3)).collect();
        let sum: f64 = raw.iter().sum();
        for (k, v) in raw.iter().enumerate() {
            data[k * n + i] = (v / sum) as f32;
        }
    }
    ProbTensor::new(TensorKind::Probabilities, c, h, w, data).unwrap()
}

pub fn uniform_probs(c: usize, h: usize, w: usize) -> ProbTensor {
    ProbTensor::new(TensorKind::Probabilities, c, h, w, vec![1.0 / c as f32; c * h * w]).unwrap()
}

pub fn mask_png(map: &LabelMap, schema: &ClassSchema) -> Vec<u8> {
    encode_mask(map, schema, MaskEncoding::RawValues).unwrap()
}

/// Ground truth [Trees, Sky; Rocks, Logs] and a prediction with one
/// wrong pixel (Logs predicted as Rocks): pixel accuracy 3/4.
pub fn two_by_two_pair(schema: &ClassSchema) -> (LabelMap, LabelMap) {
    let idx = |n: &str| schema.index_of(n).unwrap() as u8;
    let gt = label_map(&[&[idx("Trees"), idx("Sky")], &[idx("Rocks"), idx("Logs")]]);
    let pred = label_map(&[&[idx("Trees"), idx("Sky")], &[idx("Rocks"), idx("Rocks")]]);
    (gt, pred)
}

// ----------------------------------------------------------------- oracles

/// Naive per-pixel count; ignored ground-truth pixels are skipped.
pub fn oracle_confusion(gt: &LabelMap, pred: &LabelMap, classes: usize) -> ConfusionAccumulator {
    let mut counts = vec![0u64; classes * classes];
    for row in 0..gt.height() {
        for col in 0..gt.width() {
            let g = gt.get(row, col);
            if g == IGNORE_INDEX {
                continue;
            }
            counts[g as usize * classes + pred.get(row, col) as usize] += 1;
        }
    }
    ConfusionAccumulator::from_counts(classes, counts)
}

/// Fully connected CRF with Potts compatibility, solved by mean field with
/// explicit all-pairs messages:
/// `Q_i(l) ∝ exp(−ψ_u(l) − Σ_{j≠i} k(i, j) Σ_{l'≠l} Q_j(l'))`.
pub fn oracle_crf(probs: &ProbTensor, image: &RgbImage, params: &CrfParams) -> Vec<f64> {
    let (c, h, w) = (probs.channels(), probs.height(), probs.width());
    let n = h * w;
    let unary: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..c).map(|l| -(probs.data()[l * n + i] as f64).max(1e-8).ln()).collect())
        .collect();
    let mut q: Vec<Vec<f64>> = unary
        .iter()
        .map(|u| {
            let e: Vec<f64> = u.iter().map(|v| (-v).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect();
    let pos = |i: usize| ((i / w) as f64, (i % w) as f64);
    let kernel = |i: usize, j: usize| {
        let ((yi, xi), (yj, xj)) = (pos(i), pos(j));
        let d2 = (yi - yj).powi(2) + (xi - xj).powi(2);
        let (a, b) = (image.pixel(i / w, i % w), image.pixel(j / w, j % w));
        let c2: f64 = (0..3).map(|k| (a[k] as f64 - b[k] as f64).powi(2)).sum();
        params.w_smooth * (-d2 / (2.0 * params.theta_gamma.powi(2))).exp()
            + params.w_bilateral
                * (-d2 / (2.0 * params.theta_alpha.powi(2)) - c2 / (2.0 * params.theta_beta.powi(2))).exp()
    };
    for _ in 0..params.iterations {
        let mut next = vec![vec![0.0; c]; n];
        for i in 0..n {
            let mut energy = unary[i].clone();
            for (j, qj) in q.iter().enumerate() {
                if j == i {
                    continue;
                }
                let k = kernel(i, j);
                let mass: f64 = qj.iter().sum();
                for (l, e) in energy.iter_mut().enumerate() {
                    *e += k * (mass - qj[l]);
                }
            }
            let min = energy.iter().copied().fold(f64::INFINITY, f64::min);
            let e: Vec<f64> = energy.iter().map(|v| (min - v).exp()).collect();
            let s: f64 = e.iter().sum();
            next[i] = e.iter().map(|v| v / s).collect();
        }
        q = next;
    }
    // Class-major, like ProbTensor.
    let mut out = vec![0.0; c * n];
    for i in 0..n {
        for l in 0..c {
            out[l * n + i] = q[i][l];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePlan {
    pub total_cost: f64,
    pub waypoints: Vec<Cell>,
}

/// Plain Dijkstra (linear scan for the minimum). The cost of a path is
/// kept as separate straight and diagonal sums and reported as
/// `straight + √2·diagonal`.
pub fn oracle_dijkstra(map: &Costmap, start: Cell, goal: Cell) -> Option<OraclePlan> {
    let (h, w) = (map.height(), map.width());
    if map.cost(start.0, start.1).is_none() || map.cost(goal.0, goal.1).is_none() {
        return None;
    }
    let idx = |(r, c): Cell| r * w + c;
    let mut dist = vec![(f64::INFINITY, 0.0, 0.0); h * w];
    let mut prev = vec![usize::MAX; h * w];
    let mut done = vec![false; h * w];
    dist[idx(start)] = (0.0, 0.0, 0.0);
    loop {
        let mut best = None;
        for i in 0..h * w {
            if !done[i] && dist[i].0.is_finite() && best.is_none_or(|b: usize| dist[i].0 < dist[b].0) {
                best = Some(i);
            }
        }
        let u = best?;
        if u == idx(goal) {
            break;
        }
        done[u] = true;
        let (ur, uc) = (u / w, u % w);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (r, c) = (ur as i64 + dr, uc as i64 + dc);
                if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                let Some(cost) = map.cost(r, c) else { continue };
                let (_, s, d) = dist[u];
                let (s, d) = if dr != 0 && dc != 0 { (s, d + cost) } else { (s + cost, d) };
                let total = s + SQRT_2 * d;
                let v = r * w + c;
                if total < dist[v].0 {
                    dist[v] = (total, s, d);
                    prev[v] = u;
                }
            }
        }
    }
    let mut waypoints = vec![goal];
    let mut cur = idx(goal);
    while cur != idx(start) {
        cur = prev[cur];
        waypoints.push((cur / w, cur % w));
    }
    waypoints.reverse();
    Some(OraclePlan {
        total_cost: dist[idx(goal)].0,
        waypoints,
    })
}

/// Random costmap with integer tier costs; about `blocked` of the cells are
/// obstacles.
pub fn random_costmap(rng: &mut ChaCha8Rng, h: usize, w: usize, blocked: f64, costs: TierCosts) -> Costmap {
    let tiers = (0..h * w)
        .map(|_| {
            let x: f64 = rng.random();
            if x < blocked {
                Tier::Obstacle
            } else if x < blocked + (1.0 - blocked) / 3.0 {
                Tier::Caution
            } else {
                Tier::Safe
            }
        })
        .collect();
    Costmap::from_tiers(w, h, tiers, costs).unwrap()
}

/// Combined loss written out term by term: weighted-mean cross-entropy
/// plus soft Dice over classes present in the ground truth.
pub fn oracle_loss(logits: &[f64], c: usize, gt: &LabelMap, weights: &[f64], cfg: &LossConfig) -> f64 {
    let n = gt.len();
    let mut p = vec![0.0; c * n];
    for i in 0..n {
        let m = (0..c).map(|k| logits[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..c).map(|k| (logits[k * n + i] - m).exp()).sum();
        for k in 0..c {
            p[k * n + i] = (logits[k * n + i] - m).exp() / z;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &y) in gt.data().iter().enumerate() {
        if y == IGNORE_INDEX {
            continue;
        }
        num += weights[y as usize] * -p[y as usize * n + i].ln();
        den += weights[y as usize];
    }
    let ce = num / den;
    let mut dice_sum = 0.0;
    let mut present = 0;
    for k in 0..c {
        let g: Vec<f64> = gt.data().iter().map(|&y| if y as usize == k { 1.0 } else { 0.0 }).collect();
        if g.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let valid = |i: usize| gt.data()[i] != IGNORE_INDEX;
        let inter: f64 = (0..n).filter(|&i| valid(i)).map(|i| p[k * n + i] * g[i]).sum();
        let pm: f64 = (0..n).filter(|&i| valid(i)).map(|i| p[k * n + i]).sum();
        let gm: f64 = g.iter().sum();
        dice_sum += (2.0 * inter + cfg.epsilon) / (pm + gm + cfg.epsilon);
        present += 1;
    }
    let dice = 1.0 - dice_sum / present as f64;
    cfg.lambda_ce * ce + cfg.lambda_dice * dice
}

/// Central differences of [`oracle_loss`] in 64-bit.
pub fn oracle_fd_grad(logits: &[f64], c: usize, gt: &LabelMap, weights: &[f64], cfg: &LossConfig, step: f64) -> Vec<f64> {
    let mut probe = logits.to_vec();
    (0..logits.len())
        .map(|j| {
            probe[j] = logits[j] + step;
            let up = oracle_loss(&probe, c, gt, weights, cfg);
            probe[j] = logits[j] - step;
            let down = oracle_loss(&probe, c, gt, weights, cfg);
            probe[j] = logits[j];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ------------------------------------------------------------ front ends

pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `terraseg` binary.
pub fn run_cli<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> CliRun {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_terraseg"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("spawn terraseg");
    CliRun {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub const BOUNDARY: &str = "XtestBoundaryX";

/// `multipart/form-data` body with one part per `(name, bytes)`.
pub fn form(parts: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\nContent-Type: application/octet-stream\r\n\r\n")
                .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub struct HttpReply {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

/// Sends one request through the router without a socket.
pub fn call(router: axum::Router, method: &str, uri: &str, body: Vec<u8>) -> HttpReply {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let req = axum::http::Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(axum::body::Body::from(body))
        .unwrap();
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    runtime.block_on(async move {
        let resp = router.oneshot(req).await.unwrap();
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        HttpReply { status, content_type, body }
    })
}

/// Splits a multipart response into `(name, bytes)` parts.
pub fn split_multipart(reply: &HttpReply) -> Vec<(String, Vec<u8>)> {
    let boundary = reply.content_type.split("boundary=").nth(1).expect("boundary").to_string();
    let delim = format!("--{boundary}");
    let body = &reply.body;
    let find = |from: usize, pat: &[u8]| body[from..].windows(pat.len()).position(|w| w == pat).map(|p| p + from);
    let mut parts = Vec::new();
    let mut pos = find(0, delim.as_bytes()).expect("opening delimiter") + delim.len();
    while !body[pos..].starts_with(b"--") {
        let head_end = find(pos, b"\r\n\r\n").unwrap();
        let head = String::from_utf8_lossy(&body[pos..head_end]).to_string();
        let name = head.split("name=\"").nth(1).unwrap().split('"').next().unwrap().to_string();
        let next = find(head_end, format!("\r\n{delim}").as_bytes()).unwrap();
        parts.push((name, body[head_end + 4..next].to_vec()));
        pos = next + 2 + delim.len();
    }
    parts
}

pub fn widen(t: &ProbTensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

//! Straight-line re-implementation of single-RoI inference on plain nested
//! vectors, written independently of the library's scoring path.

#![allow(clippy::needless_range_loop)]

pub struct Head {
    /// `slots[c][k]` unit prototypes.
    pub slots: Vec<Vec<Vec<f64>>>,
    /// `w[r][col]`.
    pub w: Vec<Vec<f64>>,
    pub lambda: f64,
    pub b_bg: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub use_align: bool,
    pub per_class: bool,
    /// `a[i][j]` with i over `[GAP(F); p]`, j over `[dx cells; dy cells]`.
    pub a: Option<Vec<Vec<f64>>>,
}

pub struct Roi {
    pub f: Vec<f64>,
    /// `map[c][y][x]`.
    pub map: Vec<Vec<Vec<f64>>>,
    pub z_cls: Vec<f64>,
    pub z_pcb: Option<Vec<f64>>,
}

/// Everything whose change signals a non-smooth point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub global: (usize, usize),
    pub best_slots: Vec<usize>,
    /// Floor cell of each unclamped bilinear sample, per warp.
    pub cells: Vec<Vec<(i64, i64)>>,
}

pub struct Output {
    pub probabilities: Vec<f64>,
    pub signature: Signature,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let mut s = 0.0;
    for x in v {
        s += x * x;
    }
    let n = s.sqrt();
    v.iter().map(|x| x / n).collect()
}

fn matvec(w: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for row in w {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(v) {
            s += a * b;
        }
        out.push(s);
    }
    out
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s.clamp(-1.0, 1.0)
}

fn gap(map: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let mut out = Vec::new();
    for ch in map {
        let mut s = 0.0;
        let mut n = 0.0;
        for row in ch {
            for v in row {
                s += v;
                n += 1.0;
            }
        }
        out.push(s / n);
    }
    out
}

fn bilinear(ch: &[Vec<f64>], y: f64, x: f64) -> (f64, (i64, i64)) {
    let h = ch.len();
    let w = ch[0].len();
    let cell = (y.floor() as i64, x.floor() as i64);
    let y = y.max(0.0).min((h - 1) as f64);
    let x = x.max(0.0).min((w - 1) as f64);
    let ya = y.floor() as usize;
    let xa = x.floor() as usize;
    let yb = if ya + 1 < h { ya + 1 } else { ya };
    let xb = if xa + 1 < w { xa + 1 } else { xa };
    let ty = y - ya as f64;
    let tx = x - xa as f64;
    let top = ch[ya][xa] * (1.0 - tx) + ch[ya][xb] * tx;
    let bottom = ch[yb][xa] * (1.0 - tx) + ch[yb][xb] * tx;
    (top * (1.0 - ty) + bottom * ty, cell)
}

/// Warp, pool and project; returns the unit embedding and the sample cells.
fn aligned_embedding(head: &Head, roi: &Roi, p: &[f64]) -> (Vec<f64>, Vec<(i64, i64)>) {
    let a = head.a.as_ref().expect("aligner required");
    let h = roi.map[0].len();
    let w = roi.map[0][0].len();
    let mut input = gap(&roi.map);
    input.extend_from_slice(p);
    let outputs = 2 * h * w;
    let mut raw = vec![0.0; outputs];
    for j in 0..outputs {
        for i in 0..input.len() {
            raw[j] += a[i][j] * input[i];
        }
    }
    let mut warped = vec![vec![vec![0.0; w]; h]; roi.map.len()];
    let mut cells = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let dx = raw[y * w + x].tanh();
            let dy = raw[h * w + y * w + x].tanh();
            for c in 0..roi.map.len() {
                let (v, cell) = bilinear(&roi.map[c], y as f64 + dy, x as f64 + dx);
                warped[c][y][x] = v;
                if c == 0 {
                    cells.push(cell);
                }
            }
        }
    }
    let u = gap(&warped);
    (unit(&matvec(&head.w, &u)), cells)
}

pub fn infer(head: &Head, roi: &Roi) -> Output {
    let n = head.slots.len();
    let f_hat = unit(&roi.f);
    let z0 = unit(&matvec(&head.w, &f_hat));

    let mut global = (0, 0);
    let mut best = f64::NEG_INFINITY;
    for (c, slots) in head.slots.iter().enumerate() {
        for (k, p) in slots.iter().enumerate() {
            let s = cos(&z0, p);
            if s > best {
                best = s;
                global = (c, k);
            }
        }
    }

    let best_slot = |z: &[f64], c: usize| {
        let mut kb = 0;
        let mut sb = f64::NEG_INFINITY;
        for (k, p) in head.slots[c].iter().enumerate() {
            let s = cos(z, p);
            if s > sb {
                sb = s;
                kb = k;
            }
        }
        (kb, sb)
    };

    let mut s = vec![0.0; n];
    let mut best_slots = vec![0; n];
    let mut cells = Vec::new();
    if !head.use_align {
        for c in 0..n {
            (best_slots[c], s[c]) = best_slot(&z0, c);
        }
    } else if !head.per_class {
        let (z, cl) = aligned_embedding(head, roi, &head.slots[global.0][global.1]);
        cells.push(cl);
        for c in 0..n {
            (best_slots[c], s[c]) = best_slot(&z, c);
        }
    } else {
        for c in 0..n {
            let (anchor, _) = best_slot(&z0, c);
            let (z, cl) = aligned_embedding(head, roi, &head.slots[c][anchor]);
            cells.push(cl);
            (best_slots[c], s[c]) = best_slot(&z, c);
        }
    }

    let sigma = head.lambda.exp();
    let mut fused = vec![0.0; n + 1];
    for c in 0..=n {
        let pda = if c < n { sigma * (s[c] / head.tau) } else { sigma * head.b_bg };
        fused[c] = head.alpha * pda + head.beta * roi.z_cls[c];
        if let Some(pcb) = &roi.z_pcb {
            fused[c] += head.gamma * pcb[c];
        }
    }
    let m = fused.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = fused.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    Output {
        probabilities: e.iter().map(|v| v / total).collect(),
        signature: Signature {
            global,
            best_slots,
            cells,
        },
    }
}

//! Scalar-loop reference implementations of the head and loss math.

/// Random head parameters in the `[N,d,2]` / `[N,2]` row-major layout.
#[derive(Debug, Clone)]
pub struct Heads {
    pub n: usize,
    pub d: usize,
    pub cls_w: Vec<f64>,
    pub cls_b: Vec<f64>,
    pub span_w: Vec<f64>,
    pub span_b: Vec<f64>,
}

impl Heads {
    pub fn random(rng: &mut impl rand::Rng, n: usize, d: usize, scale: f64) -> Self {
        let mut v = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(-scale..scale)).collect() };
        Self {
            n,
            d,
            cls_w: v(n * d * 2),
            cls_b: v(n * 2),
            span_w: v(n * d * 2),
            span_b: v(n * 2),
        }
    }

    pub fn build(&self) -> cdst::model::SlotHeads {
        cdst::model::SlotHeads::from_values(
            self.n,
            self.d,
            self.cls_w.clone(),
            self.cls_b.clone(),
            self.span_w.clone(),
            self.span_b.clone(),
        )
        .unwrap()
    }

    pub fn class_logits(&self, slot: usize, cls: &[f64]) -> [f64; 2] {
        let mut z = [self.cls_b[slot * 2], self.cls_b[slot * 2 + 1]];
        for (k, x) in cls.iter().enumerate().take(self.d) {
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += x * self.cls_w[(slot * self.d + k) * 2 + c];
            }
        }
        z
    }

    /// `(start, end)` logits per position.
    pub fn span_logits(&self, slot: usize, tokens: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut start = Vec::with_capacity(tokens.len());
        let mut end = Vec::with_capacity(tokens.len());
        for t in tokens {
            let mut s = self.span_b[slot * 2];
            let mut e = self.span_b[slot * 2 + 1];
            for (k, x) in t.iter().enumerate().take(self.d) {
                s += x * self.span_w[(slot * self.d + k) * 2];
                e += x * self.span_w[(slot * self.d + k) * 2 + 1];
            }
            start.push(s);
            end.push(e);
        }
        (start, end)
    }
}

pub fn softmax2(z: [f64; 2]) -> (f64, f64) {
    let m = z[0].max(z[1]);
    let a = (z[0] - m).exp();
    let b = (z[1] - m).exp();
    (a / (a + b), b / (a + b))
}

pub fn masked_softmax(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for i in 0..logits.len() {
        if allowed[i] && logits[i] > m {
            m = logits[i];
        }
    }
    let mut out = vec![0.0; logits.len()];
    let mut total = 0.0;
    for i in 0..logits.len() {
        if allowed[i] {
            out[i] = (logits[i] - m).exp();
            total += out[i];
        }
    }
    for x in &mut out {
        *x /= total;
    }
    out
}

/// First allowed index holding the maximum.
pub fn scan_argmax(values: &[f64], allowed: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for i in 0..values.len() {
        if allowed[i] && best.is_none_or(|b| values[i] > values[b]) {
            best = Some(i);
        }
    }
    best.unwrap()
}

/// Best `start <= end` pair of at most `max_len` tokens by product of
/// probabilities, first in (start, end) order on ties.
pub fn scan_joint(start: &[f64], end: &[f64], allowed: &[bool], max_len: usize) -> (usize, usize) {
    let mut best = None;
    let mut score = f64::NEG_INFINITY;
    for s in 0..start.len() {
        for e in s..end.len() {
            if !allowed[s] || !allowed[e] || e - s >= max_len.max(1) {
                continue;
            }
            if start[s] * end[e] > score {
                score = start[s] * end[e];
                best = Some((s, e));
            }
        }
    }
    best.unwrap()
}

fn log_softmax_at(logits: &[f64], allowed: &[bool], at: usize) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for i in 0..logits.len() {
        if allowed[i] && logits[i] > m {
            m = logits[i];
        }
    }
    let mut sum = 0.0;
    for i in 0..logits.len() {
        if allowed[i] {
            sum += (logits[i] - m).exp();
        }
    }
    logits[at] - m - sum.ln()
}

pub struct Example {
    pub class_logits: [f64; 2],
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub allowed: Vec<bool>,
    pub gold_class: usize,
    pub gold_span: Option<(usize, usize)>,
}

/// `(slot_type_loss, span_loss, total)`.
pub fn joint_loss(batch: &[Example], beta: f64) -> (f64, f64, f64) {
    let mut slot = 0.0;
    for ex in batch {
        slot -= log_softmax_at(&ex.class_logits, &[true, true], ex.gold_class);
    }
    slot /= batch.len() as f64;
    let mut span = 0.0;
    let mut n = 0;
    for ex in batch {
        if let Some((s, e)) = ex.gold_span {
            span -= log_softmax_at(&ex.start, &ex.allowed, s);
            span -= log_softmax_at(&ex.end, &ex.allowed, e);
            n += 1;
        }
    }
    if n > 0 {
        span /= 2.0 * n as f64;
    }
    (slot, span, beta * slot + (1.0 - beta) * span)
}

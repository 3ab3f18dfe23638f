//! Probability-space losses and evaluation metrics.

/// Floor applied to probabilities before taking logs in metric log loss.
pub const LOGLOSS_CLAMP: f64 = 1e-7;

fn bce(p: f64, y: bool, clamp: f64) -> f64 {
    let p = p.clamp(clamp, 1.0 - clamp);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean cross-entropy of the click head over exposed items; 0 if none are exposed.
pub fn clk_loss(p_clk: &[f64], y_clk: &[bool], y_exp: &[bool]) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for ((&p, &y), &e) in p_clk.iter().zip(y_clk).zip(y_exp) {
        if e {
            total += bce(p, y, LOGLOSS_CLAMP);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Mean cross-entropy of the exposure head over every item.
pub fn imp_loss(p_exp: &[f64], y_exp: &[bool]) -> f64 {
    logloss(p_exp, y_exp, LOGLOSS_CLAMP)
}

pub fn total_loss(l_clk: f64, l_imp: f64, lambda: f64) -> f64 {
    l_clk + lambda * l_imp
}

/// Mean binary cross-entropy with probabilities clamped to `[clamp, 1 - clamp]`; 0 on empty input.
pub fn logloss(scores: &[f64], labels: &[bool], clamp: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().zip(labels).map(|(&p, &y)| bce(p, y, clamp)).sum::<f64>() / scores.len() as f64
}

/// Area under the ROC curve via the rank-sum statistic, ties counted half.
///
/// `None` when only one class is present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives, doubled to stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let twice_avg_rank = (i + 1 + j + 1) as u128;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += twice_avg_rank * pos_in_group;
        i = j + 1;
    }
    let (p, n) = (pos as u128, neg as u128);
    // 2 * U = rank_sum2 - P (P + 1)
    let u2 = rank_sum2 - p * (p + 1);
    Some(u2 as f64 / (2 * p * n) as f64)
}

/// Metrics of one evaluation pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Click AUC over exposed items.
    pub auc_clk: Option<f64>,
    /// Exposure AUC over all items.
    pub auc_exp: Option<f64>,
    pub logloss_clk: f64,
    pub logloss_exp: f64,
    pub requests: usize,
    pub items: usize,
    pub exposed: usize,
    pub clicked: usize,
}

impl EvalReport {
    pub fn from_predictions(
        requests: usize,
        p_exp: &[f64],
        p_clk: &[f64],
        y_exp: &[bool],
        y_clk: &[bool],
    ) -> Self {
        let (mut s_clk, mut l_clk) = (Vec::new(), Vec::new());
        for i in 0..p_clk.len() {
            if y_exp[i] {
                s_clk.push(p_clk[i]);
                l_clk.push(y_clk[i]);
            }
        }
        EvalReport {
            auc_clk: auc(&s_clk, &l_clk),
            auc_exp: auc(p_exp, y_exp),
            logloss_clk: logloss(&s_clk, &l_clk, LOGLOSS_CLAMP),
            logloss_exp: logloss(p_exp, y_exp, LOGLOSS_CLAMP),
            requests,
            items: p_exp.len(),
            exposed: l_clk.len(),
            clicked: l_clk.iter().filter(|&&y| y).count(),
        }
    }

    pub const CSV_HEADER: &'static str = "auc_clk,auc_exp,logloss_clk,logloss_exp,requests,items,exposed,clicked";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            opt(self.auc_clk),
            opt(self.auc_exp),
            self.logloss_clk,
            self.logloss_exp,
            self.requests,
            self.items,
            self.exposed,
            self.clicked
        )
    }
}

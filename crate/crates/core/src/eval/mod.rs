//! Correlation metrics, significance testing and error analysis.

pub mod special;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ArticlePair, LangPair};
use crate::error::{Error, Result};

/// Pearson product-moment correlation, accumulated in one pass with
/// Welford-style co-moment updates.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::domain("pearson", format!("length {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} observations", x.len())));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = xi - mx;
        let dy = yi - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (xi - mx);
        syy += dy * (yi - my);
        sxy += dx * (yi - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub n: usize,
    pub monolingual: bool,
    pub pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub overall_pearson: f64,
    /// Keyed by unordered language pair, e.g. `de-en`.
    pub per_lang: BTreeMap<String, GroupResult>,
    /// Unweighted mean over monolingual groups with a defined correlation.
    pub mono_avg: Option<f64>,
    pub cross_avg: Option<f64>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Overall and per-language-pair Pearson between normalized labels and
/// predictions. Unlabeled pairs are ignored; a labeled pair without a
/// prediction is an error.
pub fn per_language_breakdown(pairs: &[ArticlePair], predictions: &BTreeMap<String, f64>) -> Result<EvalReport> {
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    let mut groups: BTreeMap<LangPair, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for p in pairs {
        let Some(label) = p.label() else { continue };
        let pred = *predictions
            .get(&p.pair_id)
            .ok_or_else(|| Error::domain("predictions", format!("no prediction for `{}`", p.pair_id)))?;
        labels.push(label.value());
        preds.push(pred);
        let g = groups.entry(p.lang_pair()).or_default();
        g.0.push(label.value());
        g.1.push(pred);
    }
    let overall_pearson = pearson(&labels, &preds)?;
    let mut per_lang = BTreeMap::new();
    let (mut mono, mut cross) = (Vec::new(), Vec::new());
    for (lang_pair, (l, p)) in groups {
        let (pearson, note) = match pearson(&l, &p) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(format!("excluded from averages: {e}"))),
        };
        if let Some(r) = pearson {
            if lang_pair.is_monolingual() {
                mono.push(r);
            } else {
                cross.push(r);
            }
        }
        per_lang.insert(
            lang_pair.to_string(),
            GroupResult {
                n: l.len(),
                monolingual: lang_pair.is_monolingual(),
                pearson,
                note,
            },
        );
    }
    Ok(EvalReport {
        n: labels.len(),
        overall_pearson,
        per_lang,
        mono_avg: mean(&mono),
        cross_avg: mean(&cross),
    })
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.5}"));
        let _ = writeln!(out, "{:<12} {:>8} {:>10}", "lang_pair", "n", "pearson");
        for (k, g) in &self.per_lang {
            let _ = writeln!(out, "{:<12} {:>8} {:>10}", k, g.n, fmt(g.pearson));
        }
        let _ = writeln!(out, "{:<12} {:>8} {:>10}", "overall", self.n, fmt(Some(self.overall_pearson)));
        let _ = writeln!(out, "{:<12} {:>8} {:>10}", "mono_avg", "", fmt(self.mono_avg));
        let _ = writeln!(out, "{:<12} {:>8} {:>10}", "cross_avg", "", fmt(self.cross_avg));
        out
    }

    /// Bar-chart data: `lang_pair,kind,n,pearson`.
    pub fn write_chart_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lang_pair", "kind", "n", "pearson"])?;
        for (k, g) in &self.per_lang {
            let kind = if g.monolingual { "mono" } else { "cross" };
            let r = g.pearson.map(|r| r.to_string()).unwrap_or_default();
            w.write_record([k.as_str(), kind, &g.n.to_string(), &r])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilliamsResult {
    pub t: f64,
    pub df: usize,
    /// One-tailed, for the alternative that `r12 > r13`.
    pub p_value: f64,
    pub n: usize,
}

/// Williams' test for the difference between two dependent correlations
/// `r12` and `r13` sharing variable 1, given `r23` and sample size `n`.
pub fn williams_test(r12: f64, r13: f64, r23: f64, n: usize) -> Result<WilliamsResult> {
    if n <= 3 {
        return Err(Error::domain("williams n", format!("{n} <= 3")));
    }
    for (name, r) in [("r12", r12), ("r13", r13), ("r23", r23)] {
        if r.is_nan() || r.abs() >= 1.0 {
            return Err(Error::domain("williams correlation", format!("{name} = {r}")));
        }
    }
    let nf = n as f64;
    let k = 1.0 - (r12 * r12 + r13 * r13) - r23 * r23 + 2.0 * (r12 * r13) * r23;
    let radicand = 2.0 * k * (nf - 1.0) / (nf - 3.0) + ((r12 + r13).powi(2) / 4.0) * (1.0 - r23).powi(3);
    if radicand.is_nan() || radicand <= 0.0 {
        return Err(Error::domain(
            "williams correlations",
            format!("inconsistent correlation matrix (r12={r12}, r13={r13}, r23={r23})"),
        ));
    }
    let t = (r12 - r13) * ((nf - 1.0) * (1.0 + r23)).sqrt() / radicand.sqrt();
    let df = n - 3;
    Ok(WilliamsResult {
        t,
        df,
        p_value: special::student_t_sf(t, df as f64),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub r12: f64,
    pub r13: f64,
    pub r23: f64,
    pub williams: WilliamsResult,
}

/// Tests whether `preds_a` correlates with `labels` more strongly than `preds_b`.
pub fn compare_models(labels: &[f64], preds_a: &[f64], preds_b: &[f64]) -> Result<ModelComparison> {
    let r12 = pearson(labels, preds_a)?;
    let r13 = pearson(labels, preds_b)?;
    // identical predictions make r23 = 1, where the test reduces to t = 0
    let r23 = if preds_a == preds_b {
        0.0
    } else {
        pearson(preds_a, preds_b)?
    };
    let williams = if preds_a == preds_b {
        WilliamsResult {
            t: 0.0,
            df: labels.len().saturating_sub(3),
            p_value: 0.5,
            n: labels.len(),
        }
    } else {
        williams_test(r12, r13, r23, labels.len())?
    };
    Ok(ModelComparison {
        r12,
        r13,
        r23: if preds_a == preds_b { 1.0 } else { r23 },
        williams,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriousMistake {
    pub pair_id: String,
    pub true_raw: f64,
    pub predicted_raw: f64,
    /// `predicted_raw - true_raw`; negative means the model overestimated similarity.
    pub difference: f64,
}

/// Pairs whose raw-scale error strictly exceeds `threshold`, largest first.
pub fn serious_mistakes(
    pairs: &[ArticlePair],
    predicted_raw: &BTreeMap<String, f64>,
    threshold: f64,
) -> Vec<SeriousMistake> {
    let mut out: Vec<SeriousMistake> = pairs
        .iter()
        .filter_map(|p| {
            let true_raw = p.overall_raw?;
            let predicted_raw = *predicted_raw.get(&p.pair_id)?;
            let difference = predicted_raw - true_raw;
            (difference.abs() > threshold).then(|| SeriousMistake {
                pair_id: p.pair_id.clone(),
                true_raw,
                predicted_raw,
                difference,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        b.difference
            .abs()
            .total_cmp(&a.difference.abs())
            .then_with(|| a.pair_id.cmp(&b.pair_id))
    });
    out
}

/// Writes `pair_id,true_raw,predicted_raw,difference`.
pub fn write_serious_mistakes(path: &Path, mistakes: &[SeriousMistake]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pair_id", "true_raw", "predicted_raw", "difference"])?;
    for m in mistakes {
        w.write_record([
            m.pair_id.clone(),
            m.true_raw.to_string(),
            m.predicted_raw.to_string(),
            m.difference.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `pair_id,prediction`.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let bad = || Error::format("predictions", path, format!("row {}", i + 1));
        let id = record.get(0).ok_or_else(bad)?;
        let value: f64 = record.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        if !value.is_finite() {
            return Err(bad());
        }
        out.insert(id.to_owned(), value);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, predictions: &BTreeMap<String, f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pair_id", "prediction"])?;
    for (id, v) in predictions {
        w.write_record([id.as_str(), &v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, SubScores};

    fn pair(id: &str, l1: &str, l2: &str, raw: f64) -> ArticlePair {
        let (a, b) = crate::corpus::split_pair_id(id).unwrap();
        ArticlePair {
            pair_id: id.into(),
            doc_a: a.into(),
            doc_b: b.into(),
            langs: (l1.into(), l2.into()),
            overall_raw: Some(raw),
            sub_scores: SubScores::default(),
            split: Split::Dev,
        }
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        // cov = 2.5, var_x = 1, var_y = 19/3: r = 2.5 / sqrt(19/3)
        let r = pearson(&x, &[2.0, 4.0, 7.0]).unwrap();
        assert!((r - 2.5 / (19.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.993_399_267_798_782_8).abs() < 1e-15);
        assert!(matches!(pearson(&x, &[1.0; 3]), Err(Error::UndefinedCorrelation(_))));
        assert!(pearson(&x, &[1.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn breakdown_groups() {
        // en-en: labels 1, 2/3, 1/3; preds .9 .5 .4 ; de-en: labels 1, 0, 1/3; preds .8 .1 .5
        let pairs = vec![
            pair("a_b", "en", "en", 1.0),
            pair("c_d", "en", "en", 2.0),
            pair("e_f", "en", "en", 3.0),
            pair("g_h", "de", "en", 1.0),
            pair("i_j", "en", "de", 4.0),
            pair("k_l", "de", "en", 3.0),
        ];
        let preds: BTreeMap<String, f64> = [
            ("a_b", 0.9),
            ("c_d", 0.5),
            ("e_f", 0.4),
            ("g_h", 0.8),
            ("i_j", 0.1),
            ("k_l", 0.5),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let report = per_language_breakdown(&pairs, &preds).unwrap();
        let r_en = pearson(&[1.0, 2.0 / 3.0, 1.0 / 3.0], &[0.9, 0.5, 0.4]).unwrap();
        let r_de = pearson(&[1.0, 0.0, 1.0 / 3.0], &[0.8, 0.1, 0.5]).unwrap();
        assert_eq!(report.per_lang["en-en"].pearson, Some(r_en));
        assert_eq!(report.per_lang["de-en"].pearson, Some(r_de));
        assert_eq!(report.per_lang["de-en"].n, 3);
        assert_eq!(report.mono_avg, Some(r_en));
        assert_eq!(report.cross_avg, Some(r_de));
        assert!(report.to_text().contains("de-en"));

        let single = per_language_breakdown(&pairs[..3], &preds).unwrap();
        assert_eq!(single.per_lang.len(), 1);
        assert_eq!(single.per_lang["en-en"].pearson, Some(single.overall_pearson));

        let mut constant = pairs.clone();
        constant.push(pair("m_n", "fr", "fr", 2.0));
        let mut p2 = preds.clone();
        p2.insert("m_n".into(), 0.3);
        let r = per_language_breakdown(&constant, &p2).unwrap();
        assert!(r.per_lang["fr-fr"].pearson.is_none());
        assert!(r.per_lang["fr-fr"].note.is_some());
        assert_eq!(r.mono_avg, Some(r_en));

        let mut missing = preds.clone();
        missing.remove("a_b");
        assert!(per_language_breakdown(&pairs, &missing).is_err());
    }


    #[allow(clippy::excessive_precision)]
    const WILLIAMS_GRID: [(f64, f64, f64, usize, f64, f64); 20] = [
        (0.8, 0.75, 0.9, 100, 1.8434071090214244, 0.034161454887424607),
        (0.8, 0.8, 0.5, 50, 0.0, 0.5),
        (0.6, 0.4, 0.7, 30, 1.6700502141594622, 0.053232086067620997),
        (0.4, 0.6, 0.7, 30, -1.6700502141594622, 0.94676791393237902),
        (0.9, 0.85, 0.95, 500, 8.0817599414404704, 2.4448593265470661e-15),
        (0.3, 0.1, 0.2, 20, 0.68045933376672985, 0.25268816960942864),
        (0.55, 0.5, 0.8, 1000, 3.0039176337499947, 0.0013659256779612896),
        (0.7, 0.2, 0.3, 10, 1.522053721452808, 0.085904226961388538),
        (-0.2, -0.5, 0.4, 40, 1.9046586477494574, 0.032310421663628193),
        (0.1, -0.1, 0.0, 25, 0.67005939426048988, 0.25489636731907933),
        (0.80164, 0.80089, 0.99, 4953, 0.62646403998162525, 0.26551975214970558),
        (0.77781, 0.77669, 0.995, 4953, 1.2549793725456704, 0.10477274713716821),
        (0.95, 0.9, 0.92, 15, 1.4099242936298704, 0.091975437354987991),
        (0.5, 0.45, 0.6, 200, 0.92084458347054432, 0.17912891953455884),
        (0.65, 0.62, 0.85, 909, 2.1961757040065439, 0.014166073748486429),
        (0.2, 0.19, 0.1, 5, 0.010884832411907562, 0.49615174457796074),
        (0.85, 0.7, 0.75, 60, 3.0324489738253368, 0.0018235300987361422),
        (0.33, 0.44, 0.55, 77, -1.1118943120447931, 0.86510852974525365),
        (0.99, 0.98, 0.985, 12, 1.2514680304012755, 0.1211565098252905),
        (0.05, 0.02, 0.9, 300, 1.1594301874823307, 0.12360607727632872),
    ];

    #[test]
    fn williams_reference_grid() {
        for (r12, r13, r23, n, t, p) in WILLIAMS_GRID {
            let w = williams_test(r12, r13, r23, n).unwrap();
            assert!((w.t - t).abs() < 1e-9, "t for {r12} {r13} {r23} {n}: {} vs {t}", w.t);
            assert!((w.p_value - p).abs() < 1e-9, "p for {r12} {r13} {r23} {n}: {} vs {p}", w.p_value);
        }
    }

    #[test]
    fn williams_properties() {
        let w = williams_test(0.6, 0.6, 0.4, 30).unwrap();
        assert_eq!(w.t, 0.0);
        assert_eq!(w.p_value, 0.5);
        let a = williams_test(0.8, 0.75, 0.9, 100).unwrap();
        let b = williams_test(0.75, 0.8, 0.9, 100).unwrap();
        assert_eq!(a.t, -b.t);
        assert!((a.p_value + b.p_value - 1.0).abs() < 1e-10);
        assert_eq!(a.df, 97);
        assert!(williams_test(0.8, 0.7, 0.5, 3).is_err());
        assert!(williams_test(1.0, 0.7, 0.5, 30).is_err());
    }

    #[test]
    fn serious_mistake_threshold() {
        let pairs = vec![pair("a_b", "en", "en", 1.0), pair("c_d", "en", "en", 2.0), pair("e_f", "en", "en", 4.0)];
        let perfect: BTreeMap<String, f64> = [("a_b", 1.0), ("c_d", 2.0), ("e_f", 4.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert!(serious_mistakes(&pairs, &perfect, 2.0).is_empty());
        let bad: BTreeMap<String, f64> = [("a_b", 4.0), ("c_d", 4.0), ("e_f", 1.5)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let m = serious_mistakes(&pairs, &bad, 2.0);
        assert_eq!(m.iter().map(|m| m.pair_id.as_str()).collect::<Vec<_>>(), vec!["a_b", "e_f"]);
        assert_eq!(m[0].difference, 3.0);
        assert_eq!(m[1].difference, -2.5);
    }

    #[test]
    fn comparison() {
        let labels = [0.1, 0.5, 0.3, 0.9, 0.7, 0.2, 0.4];
        let same = compare_models(&labels, &labels, &labels).unwrap();
        assert_eq!(same.williams.t, 0.0);
        let jitter = |amp: f64| -> Vec<f64> {
            labels.iter().enumerate().map(|(i, l)| l + if i % 2 == 0 { amp } else { -amp }).collect()
        };
        let (good, noisy) = (jitter(0.02), jitter(0.2));
        let c = compare_models(&labels, &good, &noisy).unwrap();
        assert!(c.williams.t > 0.0);
        assert_eq!(c.r12, pearson(&labels, &good).unwrap());
        assert_eq!(c.r13, pearson(&labels, &noisy).unwrap());
        assert!(compare_models(&labels, &labels, &noisy).is_err());
    }

    #[test]
    fn predictions_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let preds: BTreeMap<String, f64> = [("a_b".to_string(), 0.25), ("c_d".to_string(), 1.0)].into();
        write_predictions(&path, &preds).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "pair_id,prediction\na_b,0.25\nc_d,1\n");
        assert_eq!(read_predictions(&path).unwrap(), preds);
    }
}

use serde::{Deserialize, Serialize};

use super::Dataset;

/// Descriptive statistics of one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Per-column statistics in schema order, inputs first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub columns: Vec<ColumnStats>,
}

impl SummaryStats {
    pub fn column(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Table with one row per statistic and one column per variable.
    pub fn to_table(&self) -> String {
        let mut out = String::from("stat");
        for c in &self.columns {
            out.push_str(&format!(",{}", c.name));
        }
        out.push('\n');
        let rows: [(&str, fn(&ColumnStats) -> f64); 8] = [
            ("count", |c| c.count as f64),
            ("mean", |c| c.mean),
            ("std", |c| c.std),
            ("min", |c| c.min),
            ("25%", |c| c.q25),
            ("50%", |c| c.median),
            ("75%", |c| c.q75),
            ("max", |c| c.max),
        ];
        for (label, get) in rows {
            out.push_str(label);
            for c in &self.columns {
                if label == "count" {
                    out.push_str(&format!(",{}", c.count));
                } else {
                    out.push_str(&format!(",{:.2}", get(c)));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Quantile of sorted data by linear interpolation between the closest
/// order statistics at position h = (n - 1) p.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn column_stats(name: &str, values: &[f64]) -> ColumnStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let std = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ColumnStats {
        name: name.to_string(),
        count: n,
        mean,
        std,
        min: sorted[0],
        q25: quantile_linear(&sorted, 0.25),
        median: quantile_linear(&sorted, 0.5),
        q75: quantile_linear(&sorted, 0.75),
        max: sorted[n - 1],
    }
}

pub fn summarize(d: &Dataset) -> SummaryStats {
    let schema = d.schema();
    let mut columns = Vec::new();
    for (j, name) in schema.input_names().iter().enumerate() {
        columns.push(column_stats(name, &d.x().column(j)));
    }
    for (j, name) in schema.target_names().iter().enumerate() {
        columns.push(column_stats(name, &d.y().column(j)));
    }
    SummaryStats { columns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SynthSpec};
    use proptest::prelude::*;

    #[test]
    fn quartiles_of_one_to_four() {
        let s = column_stats("v", &[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.q75, 3.25);
        assert_eq!((s.min, s.max), (1.0, 4.0));
    }

    #[test]
    fn constant_column() {
        let s = column_stats("v", &[5.0, 5.0, 5.0]);
        assert_eq!(s.std, 0.0);
        assert_eq!((s.min, s.median, s.max), (5.0, 5.0, 5.0));
    }

    #[test]
    fn synthetic_harsh_matches_reference_envelope() {
        let d = synthesize(&SynthSpec::default());
        let st = summarize(&d);
        let harsh = st.column("HARSH").unwrap();
        assert_eq!(harsh.count, 121);
        assert!((harsh.mean - 6.0).abs() <= 0.6, "mean {}", harsh.mean);
        assert_eq!((harsh.min, harsh.max), (0.0, 12.0));
        assert!(st.to_table().starts_with("stat,HARSH,LL"));
    }

    // Brute-force reference: direct definition of the order-statistic
    // interpolation written independently of `quantile_linear`.
    fn brute_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = p * (v.len() as f64 - 1.0);
        let below = v.iter().enumerate().filter(|(i, _)| (*i as f64) <= pos).last().unwrap();
        let frac = pos - below.0 as f64;
        if frac == 0.0 {
            *below.1
        } else {
            below.1 * (1.0 - frac) + v[below.0 + 1] * frac
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force(values in prop::collection::vec(-1e3f64..1e3, 2..60)) {
            let s = column_stats("v", &values);
            let n = values.len() as f64;
            let mean: f64 = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((s.mean - mean).abs() <= 1e-12 * (1.0 + mean.abs()));
            prop_assert!((s.std - var.sqrt()).abs() <= 1e-12 * (1.0 + var.sqrt()));
            for (got, p) in [(s.q25, 0.25), (s.median, 0.5), (s.q75, 0.75)] {
                let want = brute_quantile(&values, p);
                prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
            prop_assert!(s.min <= s.q25 && s.q25 <= s.median && s.median <= s.q75 && s.q75 <= s.max);
        }
    }
}

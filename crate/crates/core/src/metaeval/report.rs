//! Comparison reports as JSON and as aligned text tables.

use serde::{Deserialize, Serialize};

use super::bootstrap::Mark;
use super::imagerag::Axis;

/// One AUC (or accuracy) value on the 0-100 scale with its significance mark
/// against the reference metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: f64,
    pub mark: Mark,
    /// CI of `other - reference` on the 0-100 scale; absent for the reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<[f64; 2]>,
    pub n: usize,
}

impl Cell {
    pub fn plain(value: f64, n: usize) -> Self {
        Self {
            value,
            mark: Mark::None,
            ci: None,
            n,
        }
    }

    fn render(&self) -> String {
        format!("{:.1}{}", self.value, self.mark.arrow())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCells {
    pub category: String,
    pub ta: Option<Cell>,
    pub sp: Option<Cell>,
    pub unified: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub cells: Vec<CategoryCells>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub benchmark: String,
    pub reference_metric: Option<String>,
    pub n_bootstrap: usize,
    pub p_level: f64,
    pub seed: u64,
    pub categories: Vec<String>,
    pub rows: Vec<MetricRow>,
}

fn render_grid(header: Vec<String>, body: Vec<Vec<String>>) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (i, c) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = widths[i] - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = vec![line(&header)];
    out.push(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.extend(body.iter().map(|r| line(r)));
    out.join("\n") + "\n"
}

impl ComparisonReport {
    pub fn to_table(&self) -> String {
        let mut header = vec!["metric".to_string()];
        for c in &self.categories {
            for crit in ["TA", "SP", "Unified"] {
                header.push(format!("{c} {crit}"));
            }
        }
        let body = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.metric.clone()];
                for c in &self.categories {
                    let found = r.cells.iter().find(|x| &x.category == c);
                    for cell in [
                        found.and_then(|x| x.ta.as_ref()),
                        found.and_then(|x| x.sp.as_ref()),
                        found.and_then(|x| x.unified.as_ref()),
                    ] {
                        cells.push(cell.map(Cell::render).unwrap_or_else(|| "-".into()));
                    }
                }
                cells
            })
            .collect();
        let mut s = format!("benchmark: {}\n", self.benchmark);
        if let Some(r) = &self.reference_metric {
            s.push_str(&format!(
                "reference: {r} (↓/↑ significant at p={}, {} resamples)\n",
                self.p_level, self.n_bootstrap
            ));
        }
        s + &render_grid(header, body)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub metric: String,
    pub axes: Vec<(Axis, Cell)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceReport {
    pub reference_metric: Option<String>,
    pub rounding_decimals: u32,
    pub n_bootstrap: usize,
    pub p_level: f64,
    pub seed: u64,
    pub rows: Vec<PreferenceRow>,
}

impl PreferenceReport {
    pub fn to_table(&self) -> String {
        let header = ["metric", "Textual", "Visual", "Overall"].map(String::from).to_vec();
        let body = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.metric.clone()];
                for axis in Axis::ALL {
                    let cell = r.axes.iter().find(|(a, _)| *a == axis).map(|(_, c)| c.render());
                    cells.push(cell.unwrap_or_else(|| "-".into()));
                }
                cells
            })
            .collect();
        render_grid(header, body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(marks: bool) -> ComparisonReport {
        let cell = |v: f64, m: Mark| Cell {
            value: v,
            mark: if marks { m } else { Mark::None },
            ci: marks.then_some([-3.0, -1.0]),
            n: 40,
        };
        ComparisonReport {
            benchmark: "kitten".into(),
            reference_metric: marks.then(|| "token-pair".into()),
            n_bootstrap: 1000,
            p_level: 0.05,
            seed: 0,
            categories: vec!["Animal".into()],
            rows: vec![
                MetricRow {
                    metric: "token-pair".into(),
                    cells: vec![CategoryCells {
                        category: "Animal".into(),
                        ta: Some(Cell::plain(80.2, 40)),
                        sp: Some(Cell::plain(79.4, 40)),
                        unified: Some(Cell::plain(79.8, 40)),
                    }],
                },
                MetricRow {
                    metric: "embed-sim".into(),
                    cells: vec![CategoryCells {
                        category: "Animal".into(),
                        ta: Some(cell(72.8, Mark::Under)),
                        sp: None,
                        unified: Some(cell(88.0, Mark::Over)),
                    }],
                },
            ],
        }
    }

    #[test]
    fn table_layout() {
        let t = report(true).to_table();
        assert!(t.contains("72.8↓"));
        assert!(t.contains("88.0↑"));
        assert!(t.contains("80.2 "));
        let plain = report(false).to_table();
        assert!(!plain.contains('↓') && !plain.contains('↑'));
    }

    #[test]
    fn json_roundtrip_and_table_agree() {
        let r = report(true);
        let back: ComparisonReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_table(), r.to_table());
        let table = r.to_table();
        for row in &r.rows {
            for c in &row.cells {
                for cell in [&c.ta, &c.sp, &c.unified].into_iter().flatten() {
                    assert!(table.contains(&format!("{:.1}", cell.value)));
                }
            }
        }
    }
}

//! Benchmark report rows, written as CSV or as a JSON array.
//!
//! CSV uses a fixed header, `,` separators, `.` decimals and no quoting; no
//! field can contain a comma (level fractions are joined with `;`). Missing
//! values (no ground truth, timing disabled) are written as `NA` in CSV and
//! `null` in JSON.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub dataset_id: String,
    pub n: usize,
    pub d: usize,
    pub num_trees: usize,
    pub max_depth: usize,
    pub k: usize,
    pub fractions: String,
    pub mode: String,
    pub metric: String,
    pub beam: usize,
    pub it_max: usize,
    pub num_seeds: usize,
    pub top_k: usize,
    pub pool: bool,
    pub seed: u64,
    pub queries: usize,
    pub recall_at_k: Option<f64>,
    pub dist_evals: f64,
    pub qps: Option<f64>,
    pub speedup_evals: f64,
    pub speedup_wall: Option<f64>,
}

pub const CSV_HEADER: &str = "dataset_id,n,d,num_trees,max_depth,k,fractions,mode,metric,\
beam,it_max,num_seeds,top_k,pool,seed,queries,recall_at_k,dist_evals,qps,speedup_evals,speedup_wall";

fn opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "NA".to_string(),
    }
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        [
            self.dataset_id.clone(),
            self.n.to_string(),
            self.d.to_string(),
            self.num_trees.to_string(),
            self.max_depth.to_string(),
            self.k.to_string(),
            self.fractions.clone(),
            self.mode.clone(),
            self.metric.clone(),
            self.beam.to_string(),
            self.it_max.to_string(),
            self.num_seeds.to_string(),
            self.top_k.to_string(),
            self.pool.to_string(),
            self.seed.to_string(),
            self.queries.to_string(),
            opt(self.recall_at_k, 6),
            format!("{:.3}", self.dist_evals),
            opt(self.qps, 1),
            format!("{:.3}", self.speedup_evals),
            opt(self.speedup_wall, 3),
        ]
        .join(",")
    }
}

pub fn format_fractions(fractions: &[f64]) -> String {
    fractions
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn to_json(rows: &[BenchRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> BenchRow {
        BenchRow {
            dataset_id: "abc".into(),
            n: 10,
            d: 4,
            num_trees: 64,
            max_depth: 13,
            k: 20,
            fractions: format_fractions(&[1.0, 0.1]),
            mode: "forest".into(),
            metric: "l2".into(),
            beam: 10,
            it_max: 5,
            num_seeds: 10,
            top_k: 10,
            pool: false,
            seed: 42,
            queries: 3,
            recall_at_k: Some(0.5),
            dist_evals: 12.0,
            qps: None,
            speedup_evals: 0.8333333,
            speedup_wall: None,
        }
    }

    #[test]
    fn csv_has_fixed_columns() {
        let csv = to_csv(&[row()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(
            lines[1],
            "abc,10,4,64,13,20,1;0.1,forest,l2,10,5,10,10,false,42,3,0.500000,12.000,NA,0.833,NA"
        );
        assert_eq!(
            lines[0].split(',').count(),
            lines[1].split(',').count()
        );
    }

    #[test]
    fn json_uses_null_for_missing() {
        let v: serde_json::Value = serde_json::from_str(&to_json(&[row()])).unwrap();
        assert!(v[0]["qps"].is_null());
        assert_eq!(v[0]["recall_at_k"], 0.5);
    }
}

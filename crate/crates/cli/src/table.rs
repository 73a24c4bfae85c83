use std::fmt::Write;

use voxhive::tasks::EpisodeResult;

/// One results-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub task: String,
    pub agents: usize,
    pub seed: u64,
    pub result: EpisodeResult,
}

const KEY_COLUMNS: [&str; 4] = ["method", "task", "agents", "seed"];

fn tsv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().delimiter(b'\t').has_headers(false).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 fields")
}

pub fn results_text(rows: &[Row]) -> String {
    let mut w = tsv_writer();
    let header: Vec<&str> = KEY_COLUMNS.iter().chain(EpisodeResult::COLUMNS.iter()).copied().collect();
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.method.clone(), r.task.clone(), r.agents.to_string(), r.seed.to_string()];
        rec.extend(r.result.fields());
        w.write_record(&rec).expect("in-memory write");
    }
    finish(w)
}

/// Parse a results table. Errors name the offending line.
pub fn read_results(text: &str) -> Result<Vec<Row>, String> {
    let mut rd = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| e.to_string())?.clone();
    let want: Vec<&str> = KEY_COLUMNS.iter().chain(EpisodeResult::COLUMNS.iter()).copied().collect();
    if header.iter().collect::<Vec<_>>() != want {
        return Err("line 1: unexpected header".into());
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| format!("line {line}: {e}"))?;
        let bad = |col: &str| format!("line {line}: bad {col}");
        let int = |k: usize| rec[k].parse::<u64>().map_err(|_| bad(want[k]));
        let float = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(want[k]));
        let flag = |k: usize| match &rec[k] {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(bad(want[k])),
        };
        rows.push(Row {
            method: rec[0].to_string(),
            task: rec[1].to_string(),
            agents: int(2)? as usize,
            seed: int(3)?,
            result: EpisodeResult {
                iterations_used: int(4)? as usize,
                success: flag(5)?,
                blocks_found: int(6)? as usize,
                area: int(7)? as usize,
                completion: float(8)?,
                iou: float(9)?,
                code_fid: float(10)?,
                unsatisfiable: flag(11)?,
            },
        });
    }
    Ok(rows)
}

/// Per-(method, task, agents) means of every result column.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub method: String,
    pub task: String,
    pub agents: usize,
    pub episodes: usize,
    /// Means in [`EpisodeResult::COLUMNS`] order; flags count as 0/1.
    pub means: [f64; 8],
}

fn numeric(r: &EpisodeResult) -> [f64; 8] {
    [
        r.iterations_used as f64,
        f64::from(u8::from(r.success)),
        r.blocks_found as f64,
        r.area as f64,
        r.completion,
        r.iou,
        r.code_fid,
        f64::from(u8::from(r.unsatisfiable)),
    ]
}

/// Group rows in first-appearance order and average each group.
pub fn aggregate(rows: &[Row]) -> Vec<Summary> {
    let mut out: Vec<(Summary, [f64; 8])> = Vec::new();
    for r in rows {
        let pos = out.iter().position(|(s, _)| s.method == r.method && s.task == r.task && s.agents == r.agents);
        let i = pos.unwrap_or_else(|| {
            let s = Summary { method: r.method.clone(), task: r.task.clone(), agents: r.agents, episodes: 0, means: [0.0; 8] };
            out.push((s, [0.0; 8]));
            out.len() - 1
        });
        let (s, sums) = &mut out[i];
        s.episodes += 1;
        for (acc, v) in sums.iter_mut().zip(numeric(&r.result)) {
            *acc += v;
        }
    }
    out.into_iter()
        .map(|(mut s, sums)| {
            for (m, v) in s.means.iter_mut().zip(sums) {
                *m = v / s.episodes as f64;
            }
            s
        })
        .collect()
}

pub fn summary_text(summary: &[Summary]) -> String {
    let mut w = tsv_writer();
    let mut header = vec!["method".to_string(), "task".into(), "agents".into(), "episodes".into()];
    header.extend(EpisodeResult::COLUMNS.iter().map(|c| format!("mean_{c}")));
    w.write_record(&header).expect("in-memory write");
    for s in summary {
        let mut rec = vec![s.method.clone(), s.task.clone(), s.agents.to_string(), s.episodes.to_string()];
        rec.extend(s.means.iter().map(|m| format!("{m:.6}")));
        w.write_record(&rec).expect("in-memory write");
    }
    finish(w)
}

/// Headline columns of the report: (task, metric column index, label).
const HEADLINES: [(&str, usize, &str); 7] = [
    ("corridor", 1, "corridor_success"),
    ("goal-search", 1, "goal_search_success"),
    ("block-search", 2, "blocks_found"),
    ("map-explore", 3, "explored_area"),
    ("material-collect", 4, "collect_completion"),
    ("building-create", 5, "building_iou"),
    ("building-create", 6, "building_code_fid"),
];

/// One line per (method, agents) with the headline metric of every task
/// present in the summary; `-` marks a task the method did not run.
pub fn report_text(summary: &[Summary]) -> String {
    let cols: Vec<&(&str, usize, &str)> = HEADLINES.iter().filter(|h| summary.iter().any(|s| s.task == h.0)).collect();
    let mut keys: Vec<(&str, usize)> = Vec::new();
    for s in summary {
        if !keys.contains(&(s.method.as_str(), s.agents)) {
            keys.push((s.method.as_str(), s.agents));
        }
    }
    let mut out = String::from("method\tagents");
    for c in &cols {
        write!(out, "\t{}", c.2).unwrap();
    }
    out.push('\n');
    for (method, agents) in keys {
        write!(out, "{method}\t{agents}").unwrap();
        for &&(task, col, _) in &cols {
            let cell = summary
                .iter()
                .find(|s| s.method == method && s.task == task && (s.agents == agents || task == "corridor"))
                .map_or_else(|| "-".to_string(), |s| format!("{:.3}", s.means[col]));
            write!(out, "\t{cell}").unwrap();
        }
        out.push('\n');
    }
    out
}

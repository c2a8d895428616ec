//! Dataset directory format.
//!
//! ```text
//! manifest.csv              case_id,has_C,has_R,has_P,has_G,<labels>
//! clinical.csv              case_id,key,value
//! radiology/<case_id>.csv   slice_index,f0..f255
//! pathology/<case_id>.csv   patch_id,f0..f767
//! genomic.csv               case_id,gene,expression
//! ```
//!
//! Labels are `response` (0/1) or `time_months,censor` with censor = 1 for
//! right-censored follow-up.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use imfuse_core::data::{Patch, PATHOLOGY_DIM, RADIOLOGY_DIM};
use imfuse_core::{CaseRecord, Label, Modality, SurvivalLabel};

use crate::config::TaskKind;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub cases: Vec<CaseRecord>,
}

impl Dataset {
    pub fn index_of(&self, case_id: &str) -> Option<usize> {
        self.cases.iter().position(|c| c.case_id == case_id)
    }
}

fn dataset_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Dataset(msg.into())
}

fn check_case_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.contains(['/', '\\'])
        && id.chars().all(|c| !c.is_control());
    if ok {
        Ok(())
    } else {
        Err(dataset_err(format!("case id `{id}` cannot name a file")))
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn parse_flag(s: &str, what: &str) -> Result<bool> {
    match s.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(dataset_err(format!("{what}: expected 0 or 1, got `{other}`"))),
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| dataset_err(format!("{what}: `{s}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(dataset_err(format!("{what}: non-finite value")))
    }
}

fn fnum(x: f64) -> String {
    format!("{x}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(f))
}

fn feature_header(first: &str, dim: usize) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((0..dim).map(|i| format!("f{i}")))
        .collect()
}

/// Writes `data` under `dir`, creating it. Existing files are replaced.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    for sub in ["radiology", "pathology"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| HarnessError::io(&p, e))?;
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in &data.cases {
        check_case_id(&c.case_id)?;
        c.validate()?;
        if !seen.insert(c.case_id.as_str()) {
            return Err(dataset_err(format!("duplicate case id `{}`", c.case_id)));
        }
    }

    let mut m = writer(&dir.join("manifest.csv"))?;
    let mut header = vec!["case_id", "has_C", "has_R", "has_P", "has_G"];
    match data.task {
        TaskKind::Response => header.push("response"),
        TaskKind::Survival => header.extend(["time_months", "censor"]),
    }
    m.write_record(&header)?;
    for c in &data.cases {
        let a = c.availability();
        let mut row: Vec<String> = vec![c.case_id.clone()];
        row.extend(Modality::ALL.iter().map(|&md| flag(a.contains(md)).to_string()));
        match (&c.label, data.task) {
            (Label::Response(y), TaskKind::Response) => row.push(y.to_string()),
            (Label::Survival(s), TaskKind::Survival) => {
                row.push(fnum(s.time));
                row.push(flag(s.censored).to_string());
            }
            _ => return Err(dataset_err(format!("case `{}` label does not match task", c.case_id))),
        }
        m.write_record(&row)?;
    }
    m.flush().map_err(|e| HarnessError::io(dir, e))?;

    let mut cl = writer(&dir.join("clinical.csv"))?;
    cl.write_record(["case_id", "key", "value"])?;
    let mut ge = writer(&dir.join("genomic.csv"))?;
    ge.write_record(["case_id", "gene", "expression"])?;
    for c in &data.cases {
        for (k, v) in &c.clinical {
            cl.write_record([c.case_id.as_str(), k, &fnum(*v)])?;
        }
        for (g, v) in &c.genomic {
            ge.write_record([c.case_id.as_str(), g, &fnum(*v)])?;
        }
        if !c.radiology.is_empty() {
            let mut w = writer(&dir.join("radiology").join(format!("{}.csv", c.case_id)))?;
            w.write_record(feature_header("slice_index", RADIOLOGY_DIM))?;
            for (i, s) in c.radiology.iter().enumerate() {
                let row: Vec<String> = std::iter::once(i.to_string()).chain(s.iter().map(|x| fnum(*x))).collect();
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| HarnessError::io(dir, e))?;
        }
        if !c.pathology.is_empty() {
            let mut w = writer(&dir.join("pathology").join(format!("{}.csv", c.case_id)))?;
            w.write_record(feature_header("patch_id", PATHOLOGY_DIM))?;
            for p in &c.pathology {
                let row: Vec<String> =
                    std::iter::once(p.id.clone()).chain(p.features.iter().map(|x| fnum(*x))).collect();
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| HarnessError::io(dir, e))?;
        }
    }
    cl.flush().map_err(|e| HarnessError::io(dir, e))?;
    ge.flush().map_err(|e| HarnessError::io(dir, e))?;
    Ok(())
}

fn read_features(path: &Path, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = reader(path)?;
    let width = r.headers()?.len();
    if width != dim + 1 {
        return Err(dataset_err(format!("{}: expected {} columns, found {width}", path.display(), dim + 1)));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let feats = rec
            .iter()
            .skip(1)
            .map(|s| parse_f64(s, &path.display().to_string()))
            .collect::<Result<Vec<_>>>()?;
        out.push((rec[0].to_string(), feats));
    }
    Ok(out)
}

fn read_pairs(path: &Path) -> Result<BTreeMap<String, Vec<(String, f64)>>> {
    let mut out: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut r = reader(path)?;
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(dataset_err(format!("{}: expected 3 columns", path.display())));
        }
        let v = parse_f64(&rec[2], &path.display().to_string())?;
        out.entry(rec[0].to_string()).or_default().push((rec[1].to_string(), v));
    }
    Ok(out)
}

/// Reads a dataset directory, checking that manifest flags agree with the
/// files present.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut r = reader(&dir.join("manifest.csv"))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let task = if col("response").is_some() {
        TaskKind::Response
    } else if col("time_months").is_some() && col("censor").is_some() {
        TaskKind::Survival
    } else {
        return Err(dataset_err("manifest has neither response nor time_months,censor columns"));
    };
    let need = |name: &str| col(name).ok_or_else(|| dataset_err(format!("manifest lacks `{name}`")));
    let id_col = need("case_id")?;
    let flag_cols = [need("has_C")?, need("has_R")?, need("has_P")?, need("has_G")?];

    let mut clinical = read_pairs(&dir.join("clinical.csv"))?;
    let mut genomic = read_pairs(&dir.join("genomic.csv"))?;
    let mut cases = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec[id_col].to_string();
        check_case_id(&id)?;
        if !seen.insert(id.clone()) {
            return Err(dataset_err(format!("duplicate case id `{id}`")));
        }
        let label = match task {
            TaskKind::Response => {
                let y = match rec[need("response")?].trim() {
                    "0" => 0,
                    "1" => 1,
                    other => return Err(dataset_err(format!("case `{id}`: response `{other}`"))),
                };
                Label::Response(y)
            }
            TaskKind::Survival => {
                let time = parse_f64(&rec[need("time_months")?], "time_months")?;
                if time <= 0.0 {
                    return Err(dataset_err(format!("case `{id}`: time must be positive")));
                }
                let censored = parse_flag(&rec[need("censor")?], "censor")?;
                Label::Survival(SurvivalLabel {
                    censored,
                    time,
                    bin: 0,
                })
            }
        };
        let mut case = CaseRecord::new(id.clone(), label);
        let mut flags = [false; 4];
        for (f, &c) in flags.iter_mut().zip(&flag_cols) {
            *f = parse_flag(&rec[c], "availability flag")?;
        }
        case.clinical = clinical.remove(&id).unwrap_or_default();
        case.genomic = genomic.remove(&id).unwrap_or_default();
        let rad = dir.join("radiology").join(format!("{id}.csv"));
        if rad.exists() {
            let mut rows = read_features(&rad, RADIOLOGY_DIM)?;
            for (i, (idx, _)) in rows.iter().enumerate() {
                if idx.trim().parse::<usize>().ok() != Some(i) {
                    return Err(dataset_err(format!("{}: slice indices must run 0..n", rad.display())));
                }
            }
            case.radiology = rows.drain(..).map(|r| r.1).collect();
        }
        let path = dir.join("pathology").join(format!("{id}.csv"));
        if path.exists() {
            case.pathology = read_features(&path, PATHOLOGY_DIM)?
                .into_iter()
                .map(|(id, features)| Patch { id, features })
                .collect();
        }
        let avail = case.availability();
        for (m, f) in Modality::ALL.into_iter().zip(flags) {
            if avail.contains(m) != f {
                return Err(dataset_err(format!(
                    "case `{id}`: has_{} = {} disagrees with the files",
                    m.code(),
                    flag(f)
                )));
            }
        }
        case.validate()?;
        cases.push(case);
    }
    if let Some(id) = clinical.keys().chain(genomic.keys()).next() {
        return Err(dataset_err(format!("records for `{id}` which is not in the manifest")));
    }
    if cases.is_empty() {
        return Err(dataset_err("manifest lists no cases"));
    }
    Ok(Dataset { task, cases })
}

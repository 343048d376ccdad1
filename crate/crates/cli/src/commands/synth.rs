//! `ecg synth`: generate a cohort of records with ground-truth labels,
//! interval truth, and ready-made model targets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ecg_core::io::{write_label_file, write_manifest, write_record_file, LabelFile, ManifestEntry};
use ecg_core::rng::derive_seed;
use ecg_core::synth::{
    generate_cohort, mass_targets, true_intervals, CohortSpec, DiseaseKind,
};

use crate::config::{Overrides, RunLog};

use super::{fmt_f64, INTERVAL_KEYS};

fn parse_disease(raw: &str) -> Result<DiseaseKind> {
    let norm: String = raw
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    Ok(match norm.as_str() {
        "rightheart" => DiseaseKind::RightHeart,
        "hypertrophy" => DiseaseKind::Hypertrophy,
        "lowvoltage" => DiseaseKind::LowVoltage,
        _ => bail!(
            "config key disease_kind: expected right_heart, hypertrophy, or low_voltage, got {raw:?}"
        ),
    })
}

pub fn run(
    spec_path: Option<&Path>,
    out: &Path,
    seed_flag: Option<u64>,
    scale: &str,
    mut ov: Overrides,
) -> Result<()> {
    let mut spec: CohortSpec = match spec_path {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing cohort spec {}", p.display()))?,
        None => CohortSpec::default(),
    };

    if let Some(v) = ov.usize("n_cases")? {
        spec.n_cases = v;
    }
    if let Some(v) = ov.usize("n_controls")? {
        spec.n_controls = v;
    }
    if let Some(raw) = ov.get("disease_kind") {
        spec.disease_kind = parse_disease(&raw)?;
    }
    if let Some(v) = ov.f64("severity_lo")? {
        spec.severity_range.0 = v;
    }
    if let Some(v) = ov.f64("severity_hi")? {
        spec.severity_range.1 = v;
    }
    if let Some(v) = ov.usize("duration_ms")? {
        spec.duration_ms = v;
    }
    if let Some(v) = ov.f64("noise_sd")? {
        spec.noise_sd = v;
    }
    if let Some(v) = ov.f64("jitter_frac")? {
        spec.jitter_frac = v;
    }
    if let Some(v) = ov.i32("year_lo")? {
        spec.study_years.0 = v;
    }
    if let Some(v) = ov.i32("year_hi")? {
        spec.study_years.1 = v;
    }
    let mass_noise_sd = ov.f64("mass_noise_sd")?.unwrap_or(3.0);
    spec.seed = seed_flag.or(ov.u64("seed")?).unwrap_or(spec.seed);
    ov.finish()?;

    let cohort = generate_cohort(&spec)?;
    if cohort.unmatched_controls > 0 {
        eprintln!(
            "warning: {} control(s) had no case to match against",
            cohort.unmatched_controls
        );
    }

    let records_dir = out.join("records");
    let labels_dir = out.join("labels");
    fs::create_dir_all(&records_dir)?;
    fs::create_dir_all(&labels_dir)?;

    let mut manifest = Vec::with_capacity(cohort.rows.len());
    let mut interval_rows: Vec<(String, [f64; 5])> = Vec::new();
    let mut case_targets: BTreeMap<String, f64> = BTreeMap::new();
    for row in &cohort.rows {
        let id = &row.record.record_id;
        let record_rel = format!("records/{id}.json");
        let labels_rel = format!("labels/{id}.json");
        write_record_file(&row.record, &out.join(&record_rel))?;
        write_label_file(
            &LabelFile {
                record_id: id.clone(),
                start_ms: 0,
                labels: row.labels.clone(),
            },
            &out.join(&labels_rel),
        )?;
        manifest.push(ManifestEntry {
            record: record_rel,
            labels: labels_rel,
            case_flag: row.case_flag,
            severity: row.severity,
            age: row.demographics.age,
            sex: row.demographics.sex,
            study_year: row.demographics.study_year,
            patient_id: row.record.patient_id.clone(),
        });
        interval_rows.push((id.clone(), true_intervals(&row.params)));
        case_targets.insert(id.clone(), if row.case_flag { 1.0 } else { 0.0 });
    }
    write_manifest(&manifest, &out.join("manifest.json"))?;

    let mut w = csv::Writer::from_path(out.join("truth_intervals.csv"))?;
    let mut header = vec!["record_id"];
    header.extend(INTERVAL_KEYS);
    w.write_record(&header)?;
    for (id, values) in &interval_rows {
        let mut rec = vec![id.clone()];
        rec.extend(values.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    ecg_core::gbm::write_targets_csv(&case_targets, &out.join("targets_case.csv"))?;
    let mass = mass_targets(&cohort.rows, mass_noise_sd, derive_seed(spec.seed, 0x6d61_7373))?;
    let mass_map: BTreeMap<String, f64> = cohort
        .rows
        .iter()
        .zip(mass)
        .map(|(r, t)| (r.record.record_id.clone(), t))
        .collect();
    ecg_core::gbm::write_targets_csv(&mass_map, &out.join("targets_mass.csv"))?;

    let mut log = RunLog::new("synth", spec.seed, scale);
    log.set("n_cases", spec.n_cases as u64)
        .set("n_controls", spec.n_controls as u64)
        .set("disease_kind", format!("{:?}", spec.disease_kind))
        .set("severity_lo", spec.severity_range.0)
        .set("severity_hi", spec.severity_range.1)
        .set("duration_ms", spec.duration_ms as u64)
        .set("noise_sd", spec.noise_sd)
        .set("jitter_frac", spec.jitter_frac)
        .set("year_lo", spec.study_years.0)
        .set("year_hi", spec.study_years.1)
        .set("mass_noise_sd", mass_noise_sd);
    if let Some(p) = spec_path {
        log.set_path("spec", p);
    }
    log.write(out)?;

    println!(
        "wrote {} records ({} cases, {} controls) to {}",
        cohort.rows.len(),
        spec.n_cases,
        spec.n_controls,
        out.display()
    );
    Ok(())
}

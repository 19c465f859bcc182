use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use deepseg::augment::augment_sample;
use deepseg::data::{
    generate_phantom_dataset, load_dataset, load_mask, phantom_records, save_image, save_mask, SliceRecord,
};
use deepseg::grid::{Image, Mask};
use deepseg::metrics::{case_metrics, MetricReport};
use deepseg::nn::{assemble_model, load_checkpoint, save_checkpoint};
use deepseg::tensor::derive_seed;
use deepseg::train::{crossval_split, predict_masks, train_loop};

use crate::config::{RunConfig, Subset};
use crate::error::{CliError, CliResult};
use crate::{Outcome, CHECKPOINT_FILE, HISTORY_FILE, METRICS_FILE};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))
}

pub(crate) fn load_records(cfg: &RunConfig) -> CliResult<Vec<SliceRecord>> {
    let [_, h, w] = cfg.model.input_shape;
    let records = match (&cfg.data.manifest, &cfg.data.phantom) {
        (Some(path), _) => load_dataset(path, (h, w))?,
        (None, Some(spec)) => phantom_records(spec, cfg.data.cases, cfg.data.slices_per_case, (h, w))?,
        (None, None) => return Err(CliError::config("invalid config field `data`: no data source")),
    };
    if records.is_empty() {
        return Err(CliError::config("data source holds no non-empty slices"));
    }
    Ok(records)
}

/// Case ids in order of first appearance.
fn case_ids(records: &[SliceRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    records
        .iter()
        .filter(|r| seen.insert(r.case_id()))
        .map(|r| r.case_id().to_string())
        .collect()
}

fn split(cfg: &RunConfig, records: Vec<SliceRecord>) -> CliResult<(Vec<SliceRecord>, Vec<SliceRecord>)> {
    let (_, val_ids) = crossval_split(&case_ids(&records), cfg.fold, cfg.train.seed)?;
    let val_ids: BTreeSet<String> = val_ids.into_iter().collect();
    Ok(records.into_iter().partition(|r| !val_ids.contains(r.case_id())))
}

fn slice_name(r: &SliceRecord) -> String {
    format!("{}_{:03}", r.case_id(), r.slice_index())
}

pub fn train(cfg: &RunConfig) -> CliResult<Outcome> {
    let records = load_records(cfg)?;
    let (train_set, val_set) = split(cfg, records)?;
    let model = assemble_model(&cfg.model)?;
    eprintln!(
        "training {} on {} slices, validating on {} (fold {})",
        cfg.model.encoder,
        train_set.len(),
        val_set.len(),
        cfg.fold
    );
    let (model, history) = train_loop(model, &train_set, &val_set, &cfg.train, &cfg.loss, &cfg.augment)?;
    create_dir(&cfg.output_dir)?;
    save_checkpoint(&model, &cfg.output_dir.join(CHECKPOINT_FILE))?;
    history.write_csv(&cfg.output_dir.join(HISTORY_FILE))?;
    match history.epochs.last().and_then(|r| r.val_dsc) {
        Some(d) => println!("final validation DSC: {d:.4}"),
        None => println!("final validation DSC: NA"),
    }
    Ok(Outcome::default())
}

pub fn predict(cfg: &RunConfig) -> CliResult<Outcome> {
    let path = cfg.checkpoint_path();
    let model = load_checkpoint(&path)?;
    if model.config().input_shape != cfg.model.input_shape || model.config().num_classes != cfg.model.num_classes {
        return Err(CliError::config(format!(
            "checkpoint {} expects input {:?} with {} classes, config has {:?} with {}",
            path.display(),
            model.config().input_shape,
            model.config().num_classes,
            cfg.model.input_shape,
            cfg.model.num_classes
        )));
    }
    let records = load_records(cfg)?;
    let chosen = match cfg.predict.subset {
        Subset::All => records,
        Subset::Train => split(cfg, records)?.0,
        Subset::Val => split(cfg, records)?.1,
    };
    let images: Vec<&Image> = chosen.iter().map(|r| r.image()).collect();
    let masks = predict_masks(&model, &images)?;
    let (pred_dir, truth_dir) = (cfg.output_dir.join("predictions"), cfg.output_dir.join("truth"));
    create_dir(&pred_dir)?;
    create_dir(&truth_dir)?;
    for (r, m) in chosen.iter().zip(&masks) {
        let name = format!("{}.dseg", slice_name(r));
        save_mask(&pred_dir.join(&name), m)?;
        save_mask(&truth_dir.join(&name), r.mask())?;
    }
    println!("wrote {} predicted masks to {}", masks.len(), pred_dir.display());
    Ok(Outcome::default())
}

fn dseg_files(dir: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(format!("cannot read {}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?.path();
        if path.extension().is_some_and(|x| x == "dseg") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn load_pair(pred: &Path, truth: &Path) -> deepseg::Result<(Mask, Mask)> {
    Ok((load_mask(pred)?, load_mask(truth)?))
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<Outcome> {
    let pred_dir = cfg.evaluate.pred_dir.clone().unwrap_or_else(|| cfg.output_dir.join("predictions"));
    let truth_dir = cfg.evaluate.truth_dir.clone().unwrap_or_else(|| cfg.output_dir.join("truth"));
    let preds = dseg_files(&pred_dir)?;
    let truths = dseg_files(&truth_dir)?;
    let mut outcome = Outcome::default();
    for id in preds.keys().filter(|k| !truths.contains_key(*k)) {
        outcome.warn(format!("prediction `{id}` has no ground truth; excluded"));
    }
    for id in truths.keys().filter(|k| !preds.contains_key(*k)) {
        outcome.warn(format!("ground truth `{id}` has no prediction; excluded"));
    }
    let mut cases = Vec::new();
    let mut missing = Vec::new();
    for (id, pred_path) in &preds {
        let Some(truth_path) = truths.get(id) else { continue };
        let metrics = load_pair(pred_path, truth_path).and_then(|(p, t)| case_metrics(id, &p, &t, &cfg.metrics));
        match metrics {
            Ok(m) => {
                if m.sensitivity_undefined {
                    eprintln!("note: `{id}` has no foreground in the ground truth; sensitivity reported as 1");
                }
                cases.push(m);
            }
            Err(e) => {
                outcome.warn(format!("case `{id}` reported missing: {e}"));
                missing.push(id.clone());
            }
        }
    }
    let report = MetricReport::new(cases, missing);
    create_dir(&cfg.output_dir)?;
    report.write_csv(&cfg.output_dir.join(METRICS_FILE))?;
    let csv = report.to_csv();
    if let Some(mean) = csv.lines().last() {
        println!("{mean}");
    }
    Ok(outcome)
}

pub fn synth(cfg: &RunConfig) -> CliResult<Outcome> {
    let spec = cfg
        .data
        .phantom
        .as_ref()
        .ok_or_else(|| CliError::config("invalid config field `data.phantom`: synth needs a phantom spec"))?;
    let manifest = generate_phantom_dataset(spec, cfg.data.cases, cfg.data.slices_per_case, &cfg.output_dir)?;
    println!(
        "wrote {} cases to {}",
        manifest.cases.len(),
        cfg.output_dir.join("manifest.json").display()
    );
    Ok(Outcome::default())
}

pub fn augment_preview(cfg: &RunConfig) -> CliResult<Outcome> {
    let records = load_records(cfg)?;
    let dir = cfg.output_dir.join("preview");
    create_dir(&dir)?;
    let n = cfg.preview.count.min(records.len());
    for (i, r) in records.iter().take(n).enumerate() {
        let (img, mask) = augment_sample(r.image(), r.mask(), &cfg.augment, derive_seed(cfg.train.seed, &[i as u64]))?;
        let name = slice_name(r);
        save_image(&dir.join(format!("{name}_before_image.dseg")), r.image())?;
        save_mask(&dir.join(format!("{name}_before_mask.dseg")), r.mask())?;
        save_image(&dir.join(format!("{name}_after_image.dseg")), &img)?;
        save_mask(&dir.join(format!("{name}_after_mask.dseg")), &mask)?;
    }
    println!("wrote {n} before/after pairs to {}", dir.display());
    Ok(Outcome::default())
}

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{prepare_corpora, Corpora, GridConfig, Splits};
use super::scenario::{InformationValue, Scenario};
use crate::data::Dataset;
use crate::error::{io_err, Result, SddsError};
use crate::evaluation::{
    accuracy_at, aggregate_part, metrics, one_vs_all_collapse, optimize_threshold_sums, Averaging, MetricsReport,
};
use crate::explain::{saliency, saliency_focus_score, write_panel};
use crate::models::{
    build_model, translate_domain, transfer_weights, DomainTranslator, HeadKind, ModelSpec, ModelState, TransferMode,
    TransferPlan, WeightSource,
};
use crate::training::{binary_verdicts, defect_scores, evaluate, head_seed, predicted_classes, train, TrainHistory};

/// Pre-trained transfer sources, trained once per grid.
#[derive(Clone, Debug, Default)]
pub struct Sources {
    pub generic: Option<ModelState>,
    pub industrial: Option<ModelState>,
    pub histories: BTreeMap<String, TrainHistory>,
    pub seconds: BTreeMap<String, f64>,
}

impl Sources {
    fn get(&self, mode: TransferMode) -> Option<&ModelState> {
        match mode {
            TransferMode::Generic => self.generic.as_ref(),
            TransferMode::Industrial => self.industrial.as_ref(),
            TransferMode::None => None,
        }
    }
}

fn input_size(data: &Dataset) -> Result<usize> {
    let s = data.samples.first().ok_or_else(|| SddsError::Empty(format!("corpus {}", data.name)))?;
    if s.height() != s.width() {
        return Err(SddsError::Config(format!("segments must be square, got {}x{}", s.height(), s.width())));
    }
    Ok(s.height())
}

/// Trains the sources the given scenarios need: a multiclass texture
/// classifier on the generic corpus and a binary defect classifier on the
/// industrial corpus.
pub fn train_sources(cfg: &GridConfig, corpora: &Corpora, scenarios: &[Scenario]) -> Result<Sources> {
    let mut sources = Sources::default();
    let needs = |m: TransferMode| scenarios.iter().any(|s| s.knowledge_transfer == m && s.features.has(8));
    if needs(TransferMode::Generic) {
        let g = corpora.generic.as_ref().ok_or_else(|| SddsError::Config("generic transfer needs a generic corpus".into()))?;
        let spec = ModelSpec::multiclass(input_size(&g.train)?, g.train.num_classes()).with_dropout(cfg.dropout);
        let t = Instant::now();
        let (m, h) = train(build_model(&spec, cfg.source_train.seed)?, &g.train, &g.val, &cfg.source_train)?;
        sources.seconds.insert("generic".into(), t.elapsed().as_secs_f64());
        sources.histories.insert("generic".into(), h);
        sources.generic = Some(m);
    }
    if needs(TransferMode::Industrial) {
        let i = industrial(corpora)?;
        let spec = ModelSpec::binary(input_size(&i.train)?).with_dropout(cfg.dropout);
        let t = Instant::now();
        let (m, h) = train(build_model(&spec, cfg.source_train.seed)?, &i.train, &i.val, &cfg.source_train)?;
        sources.seconds.insert("industrial".into(), t.elapsed().as_secs_f64());
        sources.histories.insert("industrial".into(), h);
        sources.industrial = Some(m);
    }
    Ok(sources)
}

fn industrial(corpora: &Corpora) -> Result<&Splits> {
    corpora
        .industrial
        .as_ref()
        .ok_or_else(|| SddsError::Config("industrial transfer needs an industrial corpus".into()))
}

/// Everything measured for one scenario and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub id: String,
    pub seed: u64,
    pub information_value: InformationValue,
    /// Test metrics after one-vs-all collapse or mask thresholding.
    pub metrics: MetricsReport,
    /// Macro-averaged multiclass test metrics.
    pub macro_metrics: Option<MetricsReport>,
    /// Mask-sum threshold tuned on validation and applied to test.
    pub threshold: Option<f64>,
    /// Threshold and accuracy when tuned directly on the test split.
    pub test_tuned: Option<(f64, f64)>,
    /// Part-level verdicts on the test split.
    pub part_metrics: MetricsReport,
    pub history: TrainHistory,
    /// Focus ratios on test true positives; binary weight-transfer runs only.
    pub focus_ratios: Vec<f64>,
    /// Wall-clock training time. Not part of the reproducible report.
    pub seconds: f64,
}

impl ScenarioRun {
    pub fn median_focus(&self) -> Option<f64> {
        median(&self.focus_ratios)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn head_for(info: InformationValue, target: &Dataset) -> HeadKind {
    match info {
        InformationValue::Binary => HeadKind::Binary,
        InformationValue::Multiclass => HeadKind::Multiclass { classes: target.num_classes() },
        InformationValue::Segmentation => HeadKind::Segmentation { defect_classes: target.num_classes() - 1 },
    }
}

fn binary_labels(data: &Dataset) -> Vec<u8> {
    data.samples.iter().map(|s| u8::from(s.is_defective())).collect()
}

fn part_metrics(test: &Dataset, verdicts: &[u8], cfg: &GridConfig) -> Result<MetricsReport> {
    let mut by_part: BTreeMap<u32, (Vec<u8>, bool)> = BTreeMap::new();
    for (s, &v) in test.samples.iter().zip(verdicts) {
        let e = by_part.entry(s.part_id).or_default();
        e.0.push(v);
        e.1 |= s.is_defective();
    }
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (part, (v, defective)) in by_part {
        pred.push(u8::from(aggregate_part(part, &v, cfg.aggregation)?.defective));
        truth.push(u8::from(defective));
    }
    metrics(&pred, &truth, Averaging::Binary)
}

/// Focus ratio per test true positive.
fn focus_ratios(model: &ModelState, test: &Dataset, verdicts: &[u8]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (s, &v) in test.samples.iter().zip(verdicts) {
        if v == 1 && s.is_defective() {
            if let Some(mask) = &s.mask {
                let map = saliency(model, &s.image, 1)?;
                out.push(saliency_focus_score(&map, mask)?);
            }
        }
    }
    Ok(out)
}

/// Trains (or, for the translation path, only assembles) the scenario's
/// model for one seed and evaluates it on the target test split.
pub fn run_scenario(
    scenario: &Scenario,
    seed: u64,
    corpora: &Corpora,
    sources: &Sources,
    cfg: &GridConfig,
) -> Result<(ScenarioRun, ModelState)> {
    scenario.validate()?;
    let target = &corpora.target;
    let size = input_size(&target.train)?;
    let head = head_for(scenario.information_value, &target.train);
    let train_cfg = cfg.scenario_train_config(scenario, seed);
    let t = Instant::now();
    let translation = scenario.features.has(9);

    let (model, history, val_outputs, test_outputs) = if translation {
        // A classifier trained on the source material only; target images are
        // mapped into the source intensity distribution before classification.
        let src = industrial(corpora)?;
        let spec = ModelSpec::binary(size);
        let (model, history) = train(build_model(&spec, seed)?, &src.train, &src.val, &train_cfg)?;
        let translator = DomainTranslator::histogram_match(src.train.samples.iter().map(|s| &s.image));
        let translate = |d: &Dataset| {
            d.with_samples(
                d.samples
                    .iter()
                    .map(|s| crate::data::ImageSample { image: translate_domain(&s.image, &translator), ..s.clone() })
                    .collect(),
            )
        };
        let (_, vo) = evaluate(&model, &translate(&target.val))?;
        let (_, to) = evaluate(&model, &translate(&target.test))?;
        (model, history, vo, to)
    } else {
        let spec = match head {
            HeadKind::Segmentation { defect_classes } => ModelSpec::segmentation(size, defect_classes),
            _ => ModelSpec::classifier(size, head, cfg.dropout),
        };
        let mut model = build_model(&spec, seed)?;
        if scenario.features.has(8) {
            let src = sources.get(scenario.knowledge_transfer).ok_or_else(|| SddsError::Scenario {
                id: scenario.id.clone(),
                reason: format!("no {:?} source was trained", scenario.knowledge_transfer),
            })?;
            let plan = TransferPlan::new(scenario.knowledge_transfer, WeightSource::Model(Box::new(src.clone())), head_seed(seed));
            model = transfer_weights(model, &plan)?.0;
        }
        let (model, history) = train(model, &target.train, &target.val, &train_cfg)?;
        let (_, vo) = evaluate(&model, &target.val)?;
        let (_, to) = evaluate(&model, &target.test)?;
        (model, history, vo, to)
    };
    let seconds = t.elapsed().as_secs_f64();

    let y_test = binary_labels(&target.test);
    let (mut threshold, mut test_tuned, mut macro_metrics) = (None, None, None);
    if let HeadKind::Segmentation { .. } = head {
        let (t_val, _) = optimize_threshold_sums(&defect_scores(head, &val_outputs)?, &binary_labels(&target.val))?;
        let test_scores = defect_scores(head, &test_outputs)?;
        threshold = Some(t_val);
        let (t_test, acc_test) = optimize_threshold_sums(&test_scores, &y_test)?;
        debug_assert!(acc_test >= accuracy_at(&test_scores, &y_test, t_val));
        test_tuned = Some((t_test, acc_test));
    }
    if let HeadKind::Multiclass { classes } = head {
        let labels: Vec<u8> = target.test.samples.iter().map(|s| s.label).collect();
        macro_metrics = Some(metrics(&predicted_classes(&test_outputs), &labels, Averaging::Macro { classes })?);
    }
    let verdicts = binary_verdicts(head, &test_outputs, threshold)?;
    let (_, y) = one_vs_all_collapse(&y_test, &y_test);
    let report = metrics(&verdicts, &y, Averaging::Binary)?;
    let part_metrics = part_metrics(&target.test, &verdicts, cfg)?;
    let focus = if head == HeadKind::Binary && !translation {
        focus_ratios(&model, &target.test, &verdicts)?
    } else {
        Vec::new()
    };
    let run = ScenarioRun {
        id: scenario.id.clone(),
        seed,
        information_value: scenario.information_value,
        metrics: report,
        macro_metrics,
        threshold,
        test_tuned,
        part_metrics,
        history,
        focus_ratios: focus,
        seconds,
    };
    Ok((run, model))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub seed: Option<u64>,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub runs: Vec<ScenarioRun>,
    pub failures: Vec<Failure>,
    pub source_histories: BTreeMap<String, TrainHistory>,
    /// Wall-clock seconds for corpus preparation and source training.
    pub setup_seconds: BTreeMap<String, f64>,
}

impl GridResult {
    pub fn runs_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a ScenarioRun> + 'a {
        self.runs.iter().filter(move |r| r.id == id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path).map_err(io_err(path))?)?)
    }
}

pub const RESULTS_FILE: &str = "results.json";

fn write_run_artifacts(dir: &Path, run: &ScenarioRun, model: &ModelState) -> Result<()> {
    let d = dir.join(&run.id).join(format!("seed{}", run.seed));
    std::fs::create_dir_all(&d).map_err(io_err(&d))?;
    model.save(&d.join("weights.sdds"))?;
    run.history.write_csv(&d.join("history.csv"))?;
    let p = d.join("metrics.json");
    std::fs::write(&p, serde_json::to_vec_pretty(run)?).map_err(io_err(&p))
}

/// Saliency panel: input, then one column per binary weight-transfer model.
fn write_saliency_panel(dir: &Path, test: &Dataset, models: &[(String, ModelState)], count: usize) -> Result<()> {
    let picks: Vec<_> = test.samples.iter().filter(|s| s.is_defective()).take(count).collect();
    for (i, s) in picks.iter().enumerate() {
        let maps = models.iter().map(|(_, m)| saliency(m, &s.image, 1)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = maps.iter().collect();
        let plane = s.image.clone().reshape(vec![s.height(), s.width()])?;
        write_panel(&dir.join(format!("saliency_{i}.png")), &plane, &refs)?;
    }
    Ok(())
}

/// Runs every configured scenario for every seed. A failing scenario is
/// recorded and the grid continues; corpus or source failures fail the
/// dependent scenarios only.
pub fn run_grid(cfg: &GridConfig, out: Option<&Path>) -> Result<GridResult> {
    let scenarios = cfg.scenarios()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let p = dir.join("grid.json");
        std::fs::write(&p, cfg.to_json()?).map_err(io_err(&p))?;
    }
    let mut result = GridResult::default();
    let t = Instant::now();
    let corpora = prepare_corpora(&cfg.corpora)?;
    result.setup_seconds.insert("corpora".into(), t.elapsed().as_secs_f64());
    let sources = match train_sources(cfg, &corpora, &scenarios) {
        Ok(s) => s,
        Err(e) => {
            // Scenarios that do not transfer can still run.
            for s in scenarios.iter().filter(|s| s.features.has(8)) {
                result.failures.push(Failure { id: s.id.clone(), seed: None, error: format!("source training: {e}") });
            }
            Sources::default()
        }
    };
    result.source_histories = sources.histories.clone();
    result.setup_seconds.extend(sources.seconds.iter().map(|(k, v)| (format!("source_{k}"), *v)));
    if let Some(dir) = out {
        for (name, m) in [("generic", &sources.generic), ("industrial", &sources.industrial)] {
            if let Some(m) = m {
                let d = dir.join("sources");
                std::fs::create_dir_all(&d).map_err(io_err(&d))?;
                m.save(&d.join(format!("{name}.sdds")))?;
            }
        }
    }
    let mut panel_models = Vec::new();
    for scenario in &scenarios {
        if result.failures.iter().any(|f| f.id == scenario.id) {
            continue;
        }
        for &seed in &scenario.seeds {
            match run_scenario(scenario, seed, &corpora, &sources, cfg) {
                Ok((run, model)) => {
                    if let Some(dir) = out {
                        write_run_artifacts(dir, &run, &model)?;
                    }
                    if seed == scenario.seeds[0] && scenario.information_value == InformationValue::Binary && !scenario.features.has(9) {
                        panel_models.push((scenario.id.clone(), model));
                    }
                    result.runs.push(run);
                }
                Err(e) => result.failures.push(Failure { id: scenario.id.clone(), seed: Some(seed), error: e.to_string() }),
            }
            if let Some(dir) = out {
                result.save(&dir.join(RESULTS_FILE))?;
            }
        }
    }
    if let Some(dir) = out {
        if !panel_models.is_empty() && cfg.panel_samples > 0 {
            write_saliency_panel(dir, &corpora.target.test, &panel_models, cfg.panel_samples)?;
        }
        result.save(&dir.join(RESULTS_FILE))?;
    }
    Ok(result)
}

//! Experiment harness: IND / FL / MDD comparison and heterogeneity sweeps.
//!
//! A run is a pure function of its [`ExperimentConfig`]. Each stochastic
//! component draws its seed as `seed::derive(master_seed, label)` with these
//! labels:
//!
//! | label | component |
//! |-------|-----------|
//! | `data` | synthetic dataset |
//! | `profiles` | device/availability profiles |
//! | `parties` | choice of the independent parties |
//! | `fl/init`, `fl/selection`, `fl/local` | FL initial model, client sampling, local training |
//! | `party/<i>/split`, `party/<i>/init`, `party/<i>/train`, `party/<i>/distill` | per-party streams |
//!
//! Seeds written in the config's `data`, `fl` or `mdd` sections are ignored.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::datagen::{self, FederatedDataset, SyntheticSpec};
use crate::discovery::{parse_query, Query};
use crate::distill::{run_mdd, DistillConfig, MddConfig, ModelExchange, Provenance};
use crate::error::{Error, Result};
use crate::federation::{deadline_percentile, run_fl_observed, FLConfig, RoundReport};
use crate::hetero::{assign_profiles, ClientProfile, Scenario, ScenarioKind};
use crate::ml::{codec, evaluate, sgd_train, ArchDescriptor, ClientDataset, Model, TrainConfig};
use crate::seed;
use crate::vault::Vault;

pub const RESULTS_HEADER: &str =
    "scenario,master_seed,approach,local_epochs,distill_epochs,mean_accuracy,party_accuracies";
pub const SWEEP_HEADER: &str =
    "scenario,master_seed,final_holdout_accuracy,fl_party_accuracy,completion_rate,virtual_time";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndConfig {
    #[serde(default = "default_parties")]
    pub num_parties: usize,
    /// Only clients with at least this many samples may be chosen as parties.
    #[serde(default)]
    pub min_party_samples: usize,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_epoch_grid")]
    pub epoch_grid: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
}

fn default_parties() -> usize {
    10
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_epoch_grid() -> Vec<usize> {
    vec![5, 10, 25, 50, 100]
}

fn default_pretrain_epochs() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MddSection {
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    /// Query text; the experiment's architecture is added when it has no `arch:` clause.
    pub query: String,
    #[serde(default)]
    pub distill: DistillConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: SyntheticSpec,
    pub model: ArchDescriptor,
    pub scenario: Scenario,
    pub fl: FLConfig,
    pub mdd: MddSection,
    pub ind: IndConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        if self.model.input_dim != self.data.input_dim || self.model.num_classes != self.data.num_classes {
            return Err(Error::Config(format!("model {} does not fit the data", self.model)));
        }
        self.scenario.validate()?;
        self.fl.validate()?;
        self.mdd.distill.validate()?;
        self.mdd_query()?;
        let ind = &self.ind;
        if ind.num_parties < 1 {
            return Err(Error::Config("num_parties must be at least 1".into()));
        }
        if ind.num_parties >= self.data.num_clients {
            return Err(Error::Config("num_parties must leave clients for the FL group".into()));
        }
        if !(ind.train_fraction > 0.0 && ind.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if ind.epoch_grid.is_empty() || ind.epoch_grid.contains(&0) {
            return Err(Error::Config("epoch_grid must be non-empty and positive".into()));
        }
        if ind.min_party_samples > self.data.samples_per_client.max {
            return Err(Error::Config("min_party_samples exceeds the largest possible client".into()));
        }
        self.party_train_config(0, self.mdd.pretrain_epochs)?.validate()?;
        Ok(())
    }

    pub fn mdd_query(&self) -> Result<Query> {
        let mut q = parse_query(&self.mdd.query).map_err(|e| Error::Config(format!("mdd.query: {e}")))?;
        if q.required_arch.is_none() {
            q.required_arch = Some(self.model.clone());
        }
        q.validate().map_err(|e| Error::Config(format!("mdd.query: {e}")))?;
        Ok(q)
    }

    fn derive(&self, label: &str) -> u64 {
        seed::derive(self.master_seed, label)
    }

    pub fn resolved_spec(&self) -> SyntheticSpec {
        SyntheticSpec { seed: self.derive("data"), ..self.data.clone() }
    }

    fn party_train_config(&self, party: usize, epochs: usize) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs,
            batch_size: self.ind.batch_size,
            learning_rate: self.ind.learning_rate,
            seed: self.derive(&format!("party/{party}/train")),
        })
    }
}

/// One row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: ScenarioKind,
    pub master_seed: u64,
    pub approach: Approach,
    pub local_epochs: usize,
    pub distill_epochs: usize,
    pub mean_accuracy: f64,
    pub party_accuracies: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Approach {
    IND,
    FL,
    MDD,
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Approach::IND => "IND",
            Approach::FL => "FL",
            Approach::MDD => "MDD",
        })
    }
}

impl std::str::FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "IND" => Ok(Approach::IND),
            "FL" => Ok(Approach::FL),
            "MDD" => Ok(Approach::MDD),
            _ => Err(Error::Format(format!("unknown approach {s:?}"))),
        }
    }
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let parties = self.party_accuracies.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";");
        format!(
            "{},{},{},{},{},{},{}",
            self.scenario, self.master_seed, self.approach, self.local_epochs, self.distill_epochs, self.mean_accuracy, parties
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Format(format!("results row has {} fields, expected 7", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number {s:?}")));
        let int = |s: &str| s.parse::<u64>().map_err(|_| Error::Format(format!("bad integer {s:?}")));
        Ok(Self {
            scenario: f[0].parse().map_err(|_| Error::Format(format!("bad scenario {:?}", f[0])))?,
            master_seed: int(f[1])?,
            approach: f[2].parse()?,
            local_epochs: int(f[3])? as usize,
            distill_epochs: int(f[4])? as usize,
            mean_accuracy: num(f[5])?,
            party_accuracies: if f[6].is_empty() { Vec::new() } else { f[6].split(';').map(num).collect::<Result<_>>()? },
        })
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Format(format!("{} does not start with the results header", path.display())));
    }
    lines.filter(|l| !l.is_empty()).map(ResultRow::from_csv).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Dataset, profiles and party split shared by every phase of a run.
pub struct Prepared {
    pub cfg: ExperimentConfig,
    pub dataset: FederatedDataset,
    /// Client ids of the independent parties, in party order.
    pub party_ids: Vec<usize>,
    pub party_train: Vec<ClientDataset<f64>>,
    pub party_test: Vec<ClientDataset<f64>>,
    /// FL group: dataset restricted to non-party clients, aligned with `fl_profiles`.
    pub fl_data: FederatedDataset,
    pub fl_profiles: Vec<ClientProfile>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = datagen::generate(&cfg.resolved_spec())?;
    let profiles = assign_profiles(dataset.clients.len(), &cfg.scenario, cfg.derive("profiles"))?;

    let mut eligible: Vec<usize> =
        (0..dataset.clients.len()).filter(|&i| dataset.clients[i].len() >= cfg.ind.min_party_samples).collect();
    if eligible.len() < cfg.ind.num_parties {
        return Err(Error::Config(format!(
            "only {} clients have at least {} samples, need {} parties",
            eligible.len(),
            cfg.ind.min_party_samples,
            cfg.ind.num_parties
        )));
    }
    eligible.shuffle(&mut seed::rng(cfg.master_seed, "parties"));
    let party_ids: Vec<usize> = eligible[..cfg.ind.num_parties].to_vec();

    let (party_train, party_test): (Vec<_>, Vec<_>) = party_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| dataset.clients[id].split(cfg.ind.train_fraction, cfg.derive(&format!("party/{i}/split"))))
        .unzip();
    if party_train.iter().chain(&party_test).any(ClientDataset::is_empty) {
        return Err(Error::Config("a party has too few samples for a train/test split".into()));
    }

    let fl_ids: Vec<usize> = (0..dataset.clients.len()).filter(|i| !party_ids.contains(i)).collect();
    let fl_data = dataset.select(&fl_ids);
    let fl_profiles = fl_ids.iter().map(|&i| profiles[i].clone()).collect();
    Ok(Prepared { cfg: cfg.clone(), dataset, party_ids, party_train, party_test, fl_data, fl_profiles })
}

impl Prepared {
    pub fn fl_config(&self) -> FLConfig {
        let cfg = &self.cfg;
        let deadline = cfg.fl.round_deadline.unwrap_or_else(|| {
            let reference = ClientProfile {
                client_id: 0,
                device: cfg.scenario.uniform_class.profile(),
                trace: crate::hetero::AvailabilityTrace::always_on(),
            };
            deadline_percentile(&self.fl_data, &reference, cfg.fl.local.epochs, codec::encoded_len(&cfg.model), 90.0)
        });
        FLConfig {
            round_deadline: Some(deadline),
            selection_seed: cfg.derive("fl/selection"),
            local: TrainConfig { seed: cfg.derive("fl/local"), ..cfg.fl.local.clone() },
            ..cfg.fl.clone()
        }
    }

    pub fn fl_init(&self) -> Result<Model<f64>> {
        Model::init(self.cfg.model.clone(), &mut seed::rng(self.cfg.master_seed, "fl/init"))
    }

    pub fn party_init(&self, party: usize) -> Result<Model<f64>> {
        Model::init(self.cfg.model.clone(), &mut seed::rng(self.cfg.master_seed, &format!("party/{party}/init")))
    }

    /// Accuracy of one model per party on that party's test split.
    pub fn party_accuracies(&self, models: &[Model<f64>]) -> Result<Vec<f64>> {
        models.iter().zip(&self.party_test).map(|(m, t)| Ok(evaluate(m, t)?.overall_accuracy)).collect()
    }

    pub fn mdd_config(&self, party: usize) -> Result<MddConfig> {
        let cfg = &self.cfg;
        let mut query = cfg.mdd_query()?;
        query.exclude_owner = Some(party_owner(party));
        Ok(MddConfig {
            pretrain: cfg.party_train_config(party, cfg.mdd.pretrain_epochs)?,
            query,
            distill: DistillConfig { seed: cfg.derive(&format!("party/{party}/distill")), ..cfg.mdd.distill.clone() },
        })
    }

    fn row(&self, approach: Approach, local_epochs: usize, distill_epochs: usize, acc: Vec<f64>) -> ResultRow {
        ResultRow {
            scenario: self.cfg.scenario.kind,
            master_seed: self.cfg.master_seed,
            approach,
            local_epochs,
            distill_epochs,
            mean_accuracy: mean(&acc),
            party_accuracies: acc,
        }
    }
}

pub fn party_owner(party: usize) -> String {
    format!("party-{party}")
}

pub const FL_OWNER: &str = "fl-group";

#[derive(Clone, Debug)]
pub struct FlOutcome {
    pub model: Model<f64>,
    pub rounds: Vec<RoundReport>,
    pub row: ResultRow,
}

impl FlOutcome {
    pub fn final_holdout_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.global_eval.overall_accuracy)
    }

    pub fn virtual_time(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.started_at + r.round_duration)
    }

    pub fn completion_rate(&self) -> f64 {
        let selected: usize = self.rounds.iter().map(|r| r.selected.len()).sum();
        let completed: usize = self.rounds.iter().map(|r| r.completed.len()).sum();
        if selected == 0 { 0.0 } else { completed as f64 / selected as f64 }
    }
}

pub fn fl_phase(
    p: &Prepared,
    on_round: impl FnMut(&RoundReport, &Model<f64>) -> Result<()>,
) -> Result<FlOutcome> {
    let fl_cfg = p.fl_config();
    info!(deadline = fl_cfg.round_deadline, clients = p.fl_data.clients.len(), "federated training");
    let (model, rounds) = run_fl_observed(&p.fl_data, &p.fl_profiles, &fl_cfg, &p.fl_init()?, on_round)?;
    let acc = p.party_accuracies(&vec![model.clone(); p.party_test.len()])?;
    let row = p.row(Approach::FL, 0, 0, acc);
    Ok(FlOutcome { model, rounds, row })
}

/// IND rows, one per epoch in the grid.
pub fn ind_phase(p: &Prepared) -> Result<Vec<ResultRow>> {
    let cfg = &p.cfg;
    let mut grid = cfg.ind.epoch_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    let per_party: Vec<Vec<f64>> = (0..p.party_ids.len())
        .into_par_iter()
        .map(|i| {
            let init = p.party_init(i)?;
            grid.iter()
                .map(|&e| {
                    let m = sgd_train(&init, &p.party_train[i], &cfg.party_train_config(i, e)?)?;
                    Ok(evaluate(&m, &p.party_test[i])?.overall_accuracy)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, &e)| p.row(Approach::IND, e, 0, per_party.iter().map(|accs| accs[g]).collect()))
        .collect())
}

pub struct MddOutcomeSet {
    pub models: Vec<Model<f64>>,
    pub provenance: Vec<Provenance>,
    pub row: ResultRow,
}

pub fn mdd_phase(p: &Prepared, exchange: &(dyn ModelExchange + Sync)) -> Result<MddOutcomeSet> {
    let results: Vec<(Model<f64>, Provenance)> = (0..p.party_ids.len())
        .into_par_iter()
        .map(|i| run_mdd(&p.party_train[i], exchange, &p.mdd_config(i)?, &p.party_init(i)?))
        .collect::<Result<_>>()?;
    let (models, provenance): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let acc = p.party_accuracies(&models)?;
    let row = p.row(Approach::MDD, p.cfg.mdd.pretrain_epochs, p.cfg.mdd.distill.epochs, acc);
    Ok(MddOutcomeSet { models, provenance, row })
}

/// Everything a full run produced.
pub struct ResultsBundle {
    pub rows: Vec<ResultRow>,
    pub fl: FlOutcome,
    pub mdd: MddOutcomeSet,
    pub party_ids: Vec<usize>,
}

/// Output files of a run directory.
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("models")).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn rounds(&self) -> PathBuf {
        self.root.join("rounds.jsonl")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn vault(&self) -> PathBuf {
        self.root.join("vault")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.mmd")
    }

    pub fn fl_model(&self) -> PathBuf {
        self.root.join("models").join("fl_global.mmv1")
    }

    pub fn mdd_model(&self, party: usize) -> PathBuf {
        self.root.join("models").join(format!("mdd_party_{party}.mmv1"))
    }

    pub fn provenance(&self, party: usize) -> PathBuf {
        self.root.join("models").join(format!("mdd_party_{party}.provenance.json"))
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("hetero.csv")
    }

    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison.csv")
    }

    pub fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        write(&self.config(), serde_json::to_string_pretty(cfg)?.as_bytes())
    }
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Appends rows to `results.csv`, writing the header first if the file is new.
pub struct ResultsWriter {
    file: fs::File,
    path: PathBuf,
}

impl ResultsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{RESULTS_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    pub fn append(&mut self, row: &ResultRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Streams round reports as JSON lines.
pub struct RoundsWriter {
    file: fs::File,
    path: PathBuf,
}

impl RoundsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { file, path: path.to_path_buf() })
    }

    pub fn append(&mut self, report: &RoundReport) -> Result<()> {
        let line = serde_json::to_string(report)?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

/// Runs FL with the rounds stream and per-round checkpoint of the global model.
pub fn run_fl_to_disk(p: &Prepared, out: &OutputLayout) -> Result<FlOutcome> {
    let mut rounds = RoundsWriter::create(&out.rounds())?;
    let checkpoint = out.fl_model();
    let outcome = fl_phase(p, |report, model| {
        rounds.append(report)?;
        write(&checkpoint, &codec::encode(model))
    })?;
    Ok(outcome)
}

/// Generates the configured dataset and writes it as `dataset.mmd`.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<FederatedDataset> {
    cfg.validate()?;
    let out = OutputLayout::new(&cfg.output_dir)?;
    out.write_config(cfg)?;
    let ds = datagen::generate(&cfg.resolved_spec())?;
    datagen::save(&ds, &out.dataset())?;
    Ok(ds)
}

/// FL only: `rounds.jsonl`, the global model checkpoint and the FL row.
pub fn run_fl_experiment(cfg: &ExperimentConfig) -> Result<FlOutcome> {
    cfg.validate()?;
    let out = OutputLayout::new(&cfg.output_dir)?;
    out.write_config(cfg)?;
    let p = prepare(cfg)?;
    let mut results = ResultsWriter::create(&out.results())?;
    let fl = run_fl_to_disk(&p, &out)?;
    results.append(&fl.row)?;
    Ok(fl)
}

/// IND baselines only, one row per grid epoch.
pub fn run_ind_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let out = OutputLayout::new(&cfg.output_dir)?;
    out.write_config(cfg)?;
    let p = prepare(cfg)?;
    let mut results = ResultsWriter::create(&out.results())?;
    let rows = ind_phase(&p)?;
    for r in &rows {
        results.append(r)?;
    }
    Ok(rows)
}

/// The full protocol: FL on the non-party clients, FL model into the vault,
/// IND baselines over the epoch grid and MDD for every party.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsBundle> {
    cfg.validate()?;
    let out = OutputLayout::new(&cfg.output_dir)?;
    out.write_config(cfg)?;
    let p = prepare(cfg)?;
    let mut results = ResultsWriter::create(&out.results())?;

    let ind_rows = ind_phase(&p)?;
    for r in &ind_rows {
        results.append(r)?;
    }

    let fl = run_fl_to_disk(&p, &out)?;
    results.append(&fl.row)?;

    let vault_dir = out.vault();
    if vault_dir.exists() {
        fs::remove_dir_all(&vault_dir).map_err(|e| Error::io(&vault_dir, e))?;
    }
    let mut vault = Vault::create(&vault_dir, p.fl_data.clone())?;
    let tags = vec!["fl".to_string(), cfg.scenario.kind.to_string()];
    let fl_id = vault.store(&fl.model, FL_OWNER, &tags, fl.virtual_time())?;
    info!(%fl_id, "stored FL global model");

    let mdd = mdd_phase(&p, &vault)?;
    for (i, (m, prov)) in mdd.models.iter().zip(&mdd.provenance).enumerate() {
        write(&out.mdd_model(i), &codec::encode(m))?;
        write(&out.provenance(i), serde_json::to_string_pretty(prov)?.as_bytes())?;
    }
    results.append(&mdd.row)?;

    let mut rows = ind_rows;
    rows.push(fl.row.clone());
    rows.push(mdd.row.clone());
    Ok(ResultsBundle { rows, fl, mdd, party_ids: p.party_ids })
}

/// One FL run per (seed, scenario) pair. Rows go to `results.csv` (FL rows)
/// and `hetero.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: ScenarioKind,
    pub master_seed: u64,
    pub final_holdout_accuracy: f64,
    pub fl_party_accuracy: f64,
    pub completion_rate: f64,
    pub virtual_time: f64,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.scenario,
            self.master_seed,
            self.final_holdout_accuracy,
            self.fl_party_accuracy,
            self.completion_rate,
            self.virtual_time
        )
    }
}

pub fn sweep_run(cfg: &ExperimentConfig, kind: ScenarioKind, master_seed: u64) -> Result<(SweepRow, ResultRow)> {
    let mut c = cfg.clone();
    c.scenario.kind = kind;
    c.master_seed = master_seed;
    let p = prepare(&c)?;
    let fl = fl_phase(&p, |_, _| Ok(()))?;
    let row = SweepRow {
        scenario: kind,
        master_seed,
        final_holdout_accuracy: fl.final_holdout_accuracy(),
        fl_party_accuracy: fl.row.mean_accuracy,
        completion_rate: fl.completion_rate(),
        virtual_time: fl.virtual_time(),
    };
    Ok((row, fl.row))
}

pub fn run_hetero_sweep(cfg: &ExperimentConfig, seeds: &[u64], kinds: &[ScenarioKind]) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let out = OutputLayout::new(&cfg.output_dir)?;
    out.write_config(cfg)?;
    let mut results = ResultsWriter::create(&out.results())?;
    let mut sweep = String::new();
    writeln!(sweep, "{SWEEP_HEADER}").unwrap();
    let mut rows = Vec::new();
    for &s in seeds {
        for &k in kinds {
            let (row, fl_row) = sweep_run(cfg, k, s)?;
            info!(scenario = %k, seed = s, acc = row.final_holdout_accuracy, "sweep point");
            results.append(&fl_row)?;
            writeln!(sweep, "{}", row.to_csv()).unwrap();
            rows.push(row);
        }
    }
    write(&out.sweep(), sweep.as_bytes())?;
    Ok(rows)
}

pub const COMPARISON_HEADER: &str =
    "scenario,master_seed,approach,local_epochs,distill_epochs,mean_accuracy,normalized_accuracy,source";

/// Re-reads a run directory and writes `comparison.csv`.
///
/// MDD rows are recomputed by re-evaluating the stored MDD models on the
/// regenerated party test splits (`source = reevaluated`); other rows are
/// copied from `results.csv`. Accuracies are normalized by the best U-scenario
/// accuracy present, or by the best accuracy overall when no U rows exist.
pub fn report(dir: &Path) -> Result<Vec<(ResultRow, f64, &'static str)>> {
    let out = OutputLayout { root: dir.to_path_buf() };
    let mut rows = read_results(&out.results())?;
    let cfg = ExperimentConfig::load(&out.config())?;

    let mut sources = vec!["results"; rows.len()];
    if rows.iter().any(|r| r.approach == Approach::MDD) {
        let p = prepare(&cfg)?;
        let models = (0..p.party_ids.len())
            .map(|i| {
                let path = out.mdd_model(i);
                codec::decode(&fs::read(&path).map_err(|e| Error::io(&path, e))?)
            })
            .collect::<Result<Vec<Model<f64>>>>()?;
        let acc = p.party_accuracies(&models)?;
        for (r, src) in rows.iter_mut().zip(sources.iter_mut()) {
            if r.approach == Approach::MDD && r.master_seed == cfg.master_seed {
                r.mean_accuracy = mean(&acc);
                r.party_accuracies = acc.clone();
                *src = "reevaluated";
            }
        }
    }

    let best = |pred: &dyn Fn(&ResultRow) -> bool| {
        rows.iter().filter(|r| pred(r)).map(|r| r.mean_accuracy).fold(f64::NAN, f64::max)
    };
    let mut norm = best(&|r| r.scenario == ScenarioKind::U);
    if norm.is_nan() {
        norm = best(&|_| true);
    }

    let mut text = String::new();
    writeln!(text, "{COMPARISON_HEADER}").unwrap();
    let mut result = Vec::with_capacity(rows.len());
    for (r, src) in rows.into_iter().zip(sources) {
        let n = if norm > 0.0 { r.mean_accuracy / norm } else { 0.0 };
        writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.scenario, r.master_seed, r.approach, r.local_epochs, r.distill_epochs, r.mean_accuracy, n, src
        )
        .unwrap();
        result.push((r, n, src));
    }
    write(&out.comparison(), text.as_bytes())?;
    Ok(result)
}

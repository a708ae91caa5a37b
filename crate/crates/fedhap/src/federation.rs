//! The federated training loop: partitioning, per-round broadcast,
//! two-phase local training (critic step on hard codes, hash-head step on
//! soft codes), and barrier aggregation of parameters and prototypes.
//!
//! All randomness flows through per-purpose streams derived from the run
//! seed, and per-client streams additionally fold in the client id and the
//! round index, so clients may execute sequentially or in parallel with
//! bit-identical results.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::MapReport;
use crate::loss::{
    discriminator_loss_with_grad, generator_total_loss, mine_local_triplets,
    plan_global_triplets, ActiveTerms, GeneratorLossMode,
};
use crate::model::{
    binarize, Discriminator, DistanceMetric, HashCode, HashHead, LossWeights,
};
use crate::nn::{adam_step, AdamState, GradientBundle, Network};
use crate::prototypes::{
    aggregate_prototypes, aggregate_prototypes_weighted, local_class_means, ClassMeanReport,
    PrototypeSet,
};
use crate::seeding::{derive_rng, stream};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

fn default_classes_per_client() -> usize {
    3
}

/// How training samples are distributed across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    /// Seeded shuffle split into near-equal parts.
    Iid,
    /// Each client draws a random set of classes and receives only samples
    /// carrying at least one of them.
    ShardByClass {
        #[serde(default = "default_classes_per_client")]
        classes_per_client: usize,
    },
}

impl Default for PartitionKind {
    fn default() -> Self {
        PartitionKind::Iid
    }
}

/// Which loss terms a run trains with. `Full` is the complete objective;
/// the other modes drop the prototype-consuming terms in different
/// combinations (the in-batch triplet and quantization terms always stay).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoPrototypes,
    AdversarialOnly,
    TripletOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoPrototypes,
        Ablation::AdversarialOnly,
        Ablation::TripletOnly,
    ];
}

/// Maps an ablation mode to its active optional loss terms.
pub fn ablation_filter(mode: Ablation) -> ActiveTerms {
    match mode {
        Ablation::Full => ActiveTerms {
            tl_global: true,
            adv: true,
        },
        Ablation::NoPrototypes => ActiveTerms {
            tl_global: false,
            adv: false,
        },
        Ablation::AdversarialOnly => ActiveTerms {
            tl_global: false,
            adv: true,
        },
        Ablation::TripletOnly => ActiveTerms {
            tl_global: true,
            adv: false,
        },
    }
}

/// Round-0 prototype policy: seeded random codes for every class, or an
/// all-invalid set that silently disables prototype-consuming terms until
/// the first aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Round0Prototypes {
    #[default]
    Random,
    Disabled,
}

fn default_clients() -> usize {
    20
}
fn default_rounds() -> usize {
    100
}
fn default_local_epochs() -> usize {
    5
}
fn default_code_bits() -> usize {
    48
}
fn default_lr() -> f64 {
    0.005
}
fn default_mu() -> f64 {
    0.05
}
fn default_lambda() -> f64 {
    0.1
}
fn default_batch_size() -> usize {
    64
}
fn default_head_hidden() -> usize {
    256
}
fn default_disc_hidden() -> usize {
    128
}

/// Everything a federation run needs besides the dataset. Unknown-key
/// rejection happens at the run-config layer, which flattens this struct
/// into one namespace of keys.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FederationConfig {
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_code_bits")]
    pub code_bits: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub distance: DistanceMetric,
    /// Triplet margin; `None` uses the metric's default.
    #[serde(default)]
    pub margin_a: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub partition: PartitionKind,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: usize,
    #[serde(default = "default_disc_hidden")]
    pub disc_hidden: usize,
    #[serde(default)]
    pub generator_loss: GeneratorLossMode,
    #[serde(default)]
    pub round0_prototypes: Round0Prototypes,
    /// Weight the parameter average by client sample counts instead of 1/m.
    #[serde(default)]
    pub weighted_fedavg: bool,
    /// Weight prototype aggregation by per-class sample counts.
    #[serde(default)]
    pub weighted_prototypes: bool,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            clients: default_clients(),
            rounds: default_rounds(),
            local_epochs: default_local_epochs(),
            code_bits: default_code_bits(),
            lr: default_lr(),
            mu: default_mu(),
            lambda: default_lambda(),
            distance: DistanceMetric::default(),
            margin_a: None,
            batch_size: default_batch_size(),
            partition: PartitionKind::default(),
            ablation: Ablation::default(),
            seed: 0,
            head_hidden: default_head_hidden(),
            disc_hidden: default_disc_hidden(),
            generator_loss: GeneratorLossMode::default(),
            round0_prototypes: Round0Prototypes::default(),
            weighted_fedavg: false,
            weighted_prototypes: false,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("clients must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be positive"));
        }
        if self.code_bits == 0 || self.batch_size == 0 {
            return Err(Error::config("code_bits and batch_size must be positive"));
        }
        if self.head_hidden == 0 || self.disc_hidden == 0 {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr must be positive and finite"));
        }
        if let PartitionKind::ShardByClass { classes_per_client } = self.partition {
            if classes_per_client == 0 {
                return Err(Error::config("classes_per_client must be positive"));
            }
        }
        self.loss_weights().map(|_| ())
    }

    /// Resolves the loss weights, substituting the metric's default margin
    /// when none is pinned.
    pub fn loss_weights(&self) -> Result<LossWeights> {
        let margin = self.margin_a.unwrap_or(self.distance.default_margin());
        LossWeights::new(self.mu, self.lambda, margin, self.distance)
    }
}

/// Splits `indices` into `m` seeded near-equal parts (sizes differ by at
/// most one). Parts are returned with ascending inner order.
pub fn partition_iid(indices: &[usize], m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::config("cannot partition into zero clients"));
    }
    if m > indices.len() {
        return Err(Error::config(format!(
            "{} clients but only {} training samples",
            m,
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut derive_rng(seed, &[stream::PARTITION]));
    let base = shuffled.len() / m;
    let extra = shuffled.len() % m;
    let mut parts = Vec::with_capacity(m);
    let mut cursor = 0;
    for i in 0..m {
        let take = base + usize::from(i < extra);
        let mut part: Vec<usize> = shuffled[cursor..cursor + take].to_vec();
        part.sort_unstable();
        parts.push(part);
        cursor += take;
    }
    Ok(parts)
}

/// Label-skewed partition: each client draws `classes_per_client` distinct
/// classes uniformly at random, then every sample goes to the least-loaded
/// client whose class set intersects its labels (ties to the smallest id).
/// Samples matching no client are assigned to the globally least-loaded
/// client in a fallback pass, which is logged.
pub fn partition_shard_noniid(
    dataset: &Dataset,
    indices: &[usize],
    m: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::config("cannot partition into zero clients"));
    }
    let classes = dataset.classes();
    if classes_per_client == 0 || classes_per_client > classes {
        return Err(Error::config(format!(
            "classes_per_client must be in 1..={classes}"
        )));
    }
    let mut rng = derive_rng(seed, &[stream::PARTITION]);
    let class_sets: Vec<Vec<bool>> = (0..m)
        .map(|_| {
            let mut member = vec![false; classes];
            for c in rand::seq::index::sample(&mut rng, classes, classes_per_client) {
                member[c] = true;
            }
            member
        })
        .collect();

    let mut order = indices.to_vec();
    order.shuffle(&mut rng);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut leftovers = Vec::new();
    for idx in order {
        let labels = dataset.label(idx);
        let target = (0..m)
            .filter(|&i| labels.iter().zip(&class_sets[i]).any(|(&l, &s)| l != 0 && s))
            .min_by_key(|&i| (parts[i].len(), i));
        match target {
            Some(i) => parts[i].push(idx),
            None => leftovers.push(idx),
        }
    }
    if !leftovers.is_empty() {
        log::warn!(
            "{} samples matched no client's class set; assigning to least-loaded clients",
            leftovers.len()
        );
        leftovers.sort_unstable();
        for idx in leftovers {
            let i = (0..m).min_by_key(|&i| (parts[i].len(), i)).expect("m > 0");
            parts[i].push(idx);
        }
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    Ok(parts)
}

/// Dispatches on the configured partition kind.
pub fn partition(dataset: &Dataset, indices: &[usize], cfg: &FederationConfig) -> Result<Vec<Vec<usize>>> {
    match cfg.partition {
        PartitionKind::Iid => partition_iid(indices, cfg.clients, cfg.seed),
        PartitionKind::ShardByClass { classes_per_client } => {
            partition_shard_noniid(dataset, indices, cfg.clients, classes_per_client, cfg.seed)
        }
    }
}

/// One client's local state. The optimizer moments are rebuilt at the start
/// of every round because the broadcast overwrites the parameters they
/// referred to.
#[derive(Debug, Clone)]
pub struct ClientState {
    id: usize,
    indices: Vec<usize>,
    head: HashHead,
    disc: Discriminator,
    adam_head: AdamState,
    adam_disc: AdamState,
}

impl ClientState {
    pub fn new(id: usize, indices: Vec<usize>, global: &RoundState) -> Self {
        ClientState {
            id,
            indices,
            adam_head: AdamState::new(global.head.net()),
            adam_disc: AdamState::new(global.disc.net()),
            head: global.head.clone(),
            disc: global.disc.clone(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// What a client sends back after its local round.
#[derive(Debug, Clone)]
pub struct RoundUpload {
    pub client_id: usize,
    pub head: Network,
    pub disc: Network,
    pub report: ClassMeanReport,
    pub samples: u64,
}

/// The server's global state after `round` aggregations.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round: usize,
    pub head: HashHead,
    pub disc: Discriminator,
    pub prototypes: PrototypeSet,
}

/// Per-term training-loss means for one round, averaged over batches and
/// then over clients. Optional terms are `None` in rounds that never
/// computed them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossAverages {
    pub tl_local: f64,
    pub tl_global: Option<f64>,
    pub quan: f64,
    pub adv_d: Option<f64>,
    pub adv_g: Option<f64>,
}

/// One round's history entry. Round 0 describes the initial model and
/// carries no losses.
#[derive(Debug, Clone, Copy)]
pub struct RoundRecord {
    pub round: usize,
    pub map: Option<MapReport>,
    pub losses: Option<LossAverages>,
}

/// Final state plus the per-round history (entry 0 is the initial model).
#[derive(Debug, Clone)]
pub struct FederationOutcome {
    pub state: RoundState,
    pub history: Vec<RoundRecord>,
}

/// Running totals of every loss term over a client's local batches.
///
/// Terms that the ablation never computed stay `None`, which downstream
/// reporting renders as empty cells rather than zeros.
#[derive(Debug, Clone, Default)]
pub struct LossSums {
    pub steps: u64,
    pub tl_local: f64,
    pub tl_global: Option<f64>,
    pub quan: f64,
    pub adv_d: Option<f64>,
    pub adv_g: Option<f64>,
}

fn training_context(client: usize, round: usize, err: Error) -> Error {
    Error::training(format!("client {client}, round {round}: {err}"))
}

/// Runs one client's local round: overwrite local models with the
/// broadcast, then for each epoch and mini-batch train the critic on hard
/// binarized codes and the hash head on the soft codes, each updating only
/// its own parameters. Returns the upload (including the class-mean report
/// from the final head) and the per-term loss sums.
pub fn local_round(
    client: &mut ClientState,
    broadcast: &RoundState,
    cfg: &FederationConfig,
    weights: &LossWeights,
    dataset: &Dataset,
) -> Result<(RoundUpload, LossSums)> {
    client.head = broadcast.head.clone();
    client.disc = broadcast.disc.clone();
    client.adam_head = AdamState::new(client.head.net());
    client.adam_disc = AdamState::new(client.disc.net());

    let active = ablation_filter(cfg.ablation);
    // Short-circuit keeps prototype reads at zero when neither term wants
    // them; with no valid prototype yet, both terms stay off this round.
    let prototypes_live =
        (active.tl_global || active.adv) && broadcast.prototypes.any_valid();
    let tl_global_on = active.tl_global && prototypes_live;
    let adv_on = active.adv && prototypes_live;
    let round = broadcast.round + 1;
    let mut rng = derive_rng(
        cfg.seed,
        &[stream::LOCAL_TRAIN, client.id as u64, round as u64],
    );
    let mut sums = LossSums {
        tl_global: tl_global_on.then_some(0.0),
        adv_d: adv_on.then_some(0.0),
        adv_g: adv_on.then_some(0.0),
        ..LossSums::default()
    };

    let mut order = client.indices.clone();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let feats: Vec<&[f64]> = batch.iter().map(|&i| dataset.feature(i)).collect();
            let labels: Vec<&[u8]> = batch.iter().map(|&i| dataset.label(i)).collect();

            if adv_on {
                let codes: Vec<(HashCode, &[u8])> = feats
                    .iter()
                    .zip(&labels)
                    .map(|(x, &y)| Ok((binarize(&client.head.infer(x)?), y)))
                    .collect::<Result<_>>()
                    .map_err(|e| training_context(client.id, round, e))?;
                let mut dgrads = GradientBundle::zeros_for(client.disc.net());
                let dv = discriminator_loss_with_grad(
                    &client.disc,
                    &codes,
                    &broadcast.prototypes,
                    &mut dgrads,
                )
                .map_err(|e| training_context(client.id, round, e))?;
                if !dv.is_finite() {
                    return Err(Error::training(format!(
                        "client {}, round {round}: non-finite critic loss",
                        client.id
                    )));
                }
                adam_step(client.disc.net_mut(), &dgrads, &mut client.adam_disc, cfg.lr)
                    .map_err(|e| training_context(client.id, round, e))?;
                *sums.adv_d.as_mut().expect("adv_on") += dv;
            }

            let mut batch_b = Vec::with_capacity(batch.len());
            let mut tapes = Vec::with_capacity(batch.len());
            for x in &feats {
                let (b, tape) = client
                    .head
                    .forward(x)
                    .map_err(|e| training_context(client.id, round, e))?;
                batch_b.push(b);
                tapes.push(tape);
            }
            let plan_local = mine_local_triplets(&labels, &mut rng);
            let plan_global = if tl_global_on {
                plan_global_triplets(&labels, &broadcast.prototypes, &mut rng)
            } else {
                Vec::new()
            };
            let mut grad_b = vec![vec![0.0; cfg.code_bits]; batch.len()];
            let terms = generator_total_loss(
                &batch_b,
                &labels,
                &plan_local,
                &plan_global,
                tl_global_on.then_some(&broadcast.prototypes),
                adv_on.then_some(&client.disc),
                weights,
                ActiveTerms {
                    tl_global: tl_global_on,
                    adv: adv_on,
                },
                cfg.generator_loss,
                Some(&mut grad_b),
            )
            .map_err(|e| training_context(client.id, round, e))?;
            let mut hgrads = GradientBundle::zeros_for(client.head.net());
            for (tape, g) in tapes.iter().zip(&grad_b) {
                client
                    .head
                    .net()
                    .backward_into(tape, g, &mut hgrads)
                    .map_err(|e| training_context(client.id, round, e))?;
            }
            adam_step(client.head.net_mut(), &hgrads, &mut client.adam_head, cfg.lr)
                .map_err(|e| training_context(client.id, round, e))?;

            sums.steps += 1;
            sums.tl_local += terms.tl_local.value;
            sums.quan += terms.quan;
            if let (Some(acc), Some(t)) = (sums.tl_global.as_mut(), terms.tl_global.as_ref()) {
                *acc += t.value;
            }
            if let (Some(acc), Some(v)) = (sums.adv_g.as_mut(), terms.adv) {
                *acc += v;
            }
        }
    }

    let report = local_class_means(
        &client.head,
        client
            .indices
            .iter()
            .map(|&i| (dataset.feature(i), dataset.label(i))),
        dataset.classes(),
    )
    .map_err(|e| training_context(client.id, round, e))?;
    let upload = RoundUpload {
        client_id: client.id,
        head: client.head.net().clone(),
        disc: client.disc.net().clone(),
        report,
        samples: client.indices.len() as u64,
    };
    Ok((upload, sums))
}

/// Averages per-client loss sums into round means. Clients that ran no
/// batch contribute nothing; a round with no batches anywhere yields None.
fn average_losses(sums: &[LossSums]) -> Option<LossAverages> {
    let active: Vec<&LossSums> = sums.iter().filter(|s| s.steps > 0).collect();
    if active.is_empty() {
        return None;
    }
    let n = active.len() as f64;
    let mean_opt = |f: fn(&LossSums) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = active
            .iter()
            .filter_map(|s| f(s).map(|v| v / s.steps as f64))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Some(LossAverages {
        tl_local: active.iter().map(|s| s.tl_local / s.steps as f64).sum::<f64>() / n,
        quan: active.iter().map(|s| s.quan / s.steps as f64).sum::<f64>() / n,
        tl_global: mean_opt(|s| s.tl_global),
        adv_d: mean_opt(|s| s.adv_d),
        adv_g: mean_opt(|s| s.adv_g),
    })
}

/// Folds all client uploads into the next round's global state: mean (or
/// sample-count-weighted mean) of head and critic parameters, fresh
/// prototype aggregation, and an incremented round index. Requires exactly
/// one upload per expected client id.
pub fn server_aggregate(
    cfg: &FederationConfig,
    uploads: &[RoundUpload],
    previous: &RoundState,
) -> Result<RoundState> {
    if uploads.len() != cfg.clients {
        return Err(Error::protocol(format!(
            "expected {} uploads, got {}",
            cfg.clients,
            uploads.len()
        )));
    }
    let mut seen = vec![false; cfg.clients];
    for u in uploads {
        if u.client_id >= cfg.clients || seen[u.client_id] {
            return Err(Error::protocol(format!(
                "bad or duplicate client id {} in uploads",
                u.client_id
            )));
        }
        seen[u.client_id] = true;
    }
    // Fixed ascending-id order keeps float sums reproducible.
    let mut ordered: Vec<&RoundUpload> = uploads.iter().collect();
    ordered.sort_by_key(|u| u.client_id);

    for u in &ordered {
        if !u.head.same_shape(previous.head.net()) || !u.disc.same_shape(previous.disc.net()) {
            return Err(Error::protocol(format!(
                "client {} uploaded parameters of the wrong shape",
                u.client_id
            )));
        }
    }
    let (head_net, disc_net) = if cfg.weighted_fedavg {
        let head_pairs: Vec<(&Network, f64)> =
            ordered.iter().map(|u| (&u.head, u.samples as f64)).collect();
        let disc_pairs: Vec<(&Network, f64)> =
            ordered.iter().map(|u| (&u.disc, u.samples as f64)).collect();
        (
            Network::weighted_mean_of(&head_pairs)?,
            Network::weighted_mean_of(&disc_pairs)?,
        )
    } else {
        let heads: Vec<&Network> = ordered.iter().map(|u| &u.head).collect();
        let discs: Vec<&Network> = ordered.iter().map(|u| &u.disc).collect();
        (Network::mean_of(&heads)?, Network::mean_of(&discs)?)
    };
    let reports: Vec<ClassMeanReport> = ordered.iter().map(|u| u.report.clone()).collect();
    let round = previous.round + 1;
    let mut prototypes = if cfg.weighted_prototypes {
        aggregate_prototypes_weighted(&reports, round as u64)?
    } else {
        aggregate_prototypes(&reports, round as u64)?
    };
    prototypes.adopt_counter(&previous.prototypes);
    let code_bits = previous.disc.code_bits();
    let classes = previous.disc.classes();
    Ok(RoundState {
        round,
        head: HashHead::from_network(head_net),
        disc: Discriminator::from_network(disc_net, code_bits, classes)?,
        prototypes,
    })
}

/// Builds the round-0 global state from the config's seeded streams.
pub fn init_round_state(cfg: &FederationConfig, dataset: &Dataset) -> Result<RoundState> {
    let mut init_rng = derive_rng(cfg.seed, &[stream::INIT_MODEL]);
    let head = HashHead::new(dataset.dim(), cfg.head_hidden, cfg.code_bits, &mut init_rng)?;
    let disc = Discriminator::new(
        cfg.code_bits,
        dataset.classes(),
        cfg.disc_hidden,
        &mut init_rng,
    )?;
    let prototypes = match cfg.round0_prototypes {
        Round0Prototypes::Random => PrototypeSet::random(
            dataset.classes(),
            cfg.code_bits,
            &mut derive_rng(cfg.seed, &[stream::PROTO_INIT]),
        )?,
        Round0Prototypes::Disabled => {
            PrototypeSet::disabled(dataset.classes(), cfg.code_bits)?
        }
    };
    Ok(RoundState {
        round: 0,
        head,
        disc,
        prototypes,
    })
}

/// Drives the full loop: init, then per round broadcast, parallel local
/// training, and aggregation. The observer is called once on the initial
/// state (with no losses) and once after every aggregation; whatever
/// retrieval score it returns is stored in the history, so the caller
/// controls evaluation cadence and any snapshotting.
pub fn run_federation<F>(
    cfg: &FederationConfig,
    dataset: &Dataset,
    train_indices: &[usize],
    mut observer: F,
) -> Result<FederationOutcome>
where
    F: FnMut(&RoundState, Option<&LossAverages>) -> Result<Option<MapReport>>,
{
    cfg.validate()?;
    let weights = cfg.loss_weights()?;
    if train_indices.iter().any(|&i| i >= dataset.len()) {
        return Err(Error::usage("training index out of dataset range"));
    }
    let parts = partition(dataset, train_indices, cfg)?;
    let mut state = init_round_state(cfg, dataset)?;
    let mut clients: Vec<ClientState> = parts
        .into_iter()
        .enumerate()
        .map(|(id, part)| ClientState::new(id, part, &state))
        .collect();

    let mut history = Vec::with_capacity(cfg.rounds + 1);
    let map0 = observer(&state, None)?;
    history.push(RoundRecord {
        round: 0,
        map: map0,
        losses: None,
    });

    for _ in 1..=cfg.rounds {
        let results: Result<Vec<(RoundUpload, LossSums)>> = clients
            .par_iter_mut()
            .map(|client| local_round(client, &state, cfg, &weights, dataset))
            .collect();
        let (uploads, sums): (Vec<_>, Vec<_>) = results?.into_iter().unzip();
        let losses = average_losses(&sums);
        state = server_aggregate(cfg, &uploads, &state)?;
        let map = observer(&state, losses.as_ref())?;
        history.push(RoundRecord {
            round: state.round,
            map,
            losses,
        });
    }
    Ok(FederationOutcome { state, history })
}

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use mixdr_client::api::{ApiError, LrTracePayload, SessionInfo, SessionStatus, SessionSummary, SESSION_SCHEMA};
use mixdr_core::classifier::{MixtureClassifier, SelectionRow};
use mixdr_core::data::LabeledDataset;
use mixdr_core::dimred::{DimRedBasis, KernelParts};
use mixdr_core::pipeline::{basis_and_projection, FitSpec};
use mixdr_core::{Error, Result};
use nalgebra::DMatrix;

pub const BASIS_CACHE_SIZE: usize = 32;

/// λ quantized to four decimals; both the cache key and the value computed.
pub fn lambda_key(lambda: f64) -> i64 {
    (lambda * 1e4).round() as i64
}

pub fn key_lambda(key: i64) -> f64 {
    key as f64 / 1e4
}

/// Basis and projected training data for one λ.
pub struct Projected {
    pub basis: DimRedBasis,
    pub z: DMatrix<f64>,
}

/// Most recently used first.
struct Lru {
    entries: VecDeque<(i64, Arc<Projected>)>,
}

impl Lru {
    fn get(&mut self, key: i64) -> Option<Arc<Projected>> {
        let pos = self.entries.iter().position(|(k, _)| *k == key)?;
        let entry = self.entries.remove(pos)?;
        let value = entry.1.clone();
        self.entries.push_front(entry);
        Some(value)
    }

    fn put(&mut self, key: i64, value: Arc<Projected>) -> Arc<Projected> {
        if let Some(existing) = self.get(key) {
            return existing;
        }
        self.entries.push_front((key, value.clone()));
        self.entries.truncate(BASIS_CACHE_SIZE);
        value
    }
}

#[derive(Debug, Clone)]
pub struct Meta {
    pub id: String,
    pub created_unix_ms: u64,
    pub n: usize,
    pub p: usize,
    pub feature_names: Vec<String>,
    pub classes: Vec<String>,
}

impl Meta {
    pub fn new(id: String, ds: &LabeledDataset) -> Self {
        Meta {
            id,
            created_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            n: ds.n(),
            p: ds.p(),
            feature_names: ds.feature_names.clone(),
            classes: ds.classes(),
        }
    }
}

/// A fitted session. Nothing in it changes after construction except caches.
pub struct ReadySession {
    pub meta: Meta,
    pub dataset: LabeledDataset,
    pub classifier: MixtureClassifier,
    pub class_idx: Vec<usize>,
    pub spec: FitSpec,
    pub selection: Vec<SelectionRow>,
    pub bic: Option<f64>,
    pub parts: KernelParts,
    /// Full-dimensional classification uncertainty per observation.
    pub uncertainty: Vec<f64>,
    pub d: usize,
    bases: Mutex<Lru>,
    lr: Mutex<HashMap<(usize, usize), Arc<LrTracePayload>>>,
}

impl ReadySession {
    pub fn new(
        meta: Meta,
        dataset: LabeledDataset,
        classifier: MixtureClassifier,
        spec: FitSpec,
        selection: Vec<SelectionRow>,
        bic: Option<f64>,
    ) -> Result<Self> {
        let class_idx = classifier.class_indices(&dataset.y)?;
        let parts = KernelParts::from_classifier(&classifier, &dataset.x, spec.marginal)?;
        let d = dataset.p().min(classifier.total_components().saturating_sub(1));
        if d == 0 {
            return Err(Error::Contract("a single component spans no directions".into()));
        }
        let uncertainty = classifier
            .predict_many(&dataset.x)?
            .into_iter()
            .map(|p| p.uncertainty)
            .collect();
        Ok(ReadySession {
            meta,
            dataset,
            classifier,
            class_idx,
            spec,
            selection,
            bic,
            parts,
            uncertainty,
            d,
            bases: Mutex::new(Lru {
                entries: VecDeque::with_capacity(BASIS_CACHE_SIZE),
            }),
            lr: Mutex::new(HashMap::new()),
        })
    }

    /// Cached basis and projection at the quantized λ.
    pub fn projected(&self, key: i64) -> Result<Arc<Projected>> {
        if let Some(hit) = self.bases.lock().expect("cache poisoned").get(key) {
            return Ok(hit);
        }
        let (basis, z) = basis_and_projection(&self.parts, &self.dataset, key_lambda(key))?;
        let fresh = Arc::new(Projected { basis, z });
        Ok(self.bases.lock().expect("cache poisoned").put(key, fresh))
    }

    pub fn cached_lr(&self, steps: usize, d_eval: usize) -> Option<Arc<LrTracePayload>> {
        self.lr.lock().expect("cache poisoned").get(&(steps, d_eval)).cloned()
    }

    pub fn store_lr(&self, steps: usize, d_eval: usize, trace: LrTracePayload) -> Arc<LrTracePayload> {
        self.lr
            .lock()
            .expect("cache poisoned")
            .entry((steps, d_eval))
            .or_insert_with(|| Arc::new(trace))
            .clone()
    }
}

pub enum Entry {
    Fitting(Meta),
    Ready(Arc<ReadySession>),
    Failed(Meta, ApiError),
}

impl Entry {
    pub fn meta(&self) -> &Meta {
        match self {
            Entry::Fitting(m) | Entry::Failed(m, _) => m,
            Entry::Ready(s) => &s.meta,
        }
    }

    pub fn status(&self) -> SessionStatus {
        match self {
            Entry::Fitting(_) => SessionStatus::Fitting,
            Entry::Ready(_) => SessionStatus::Ready,
            Entry::Failed(..) => SessionStatus::Failed,
        }
    }

    pub fn info(&self) -> SessionInfo {
        let m = self.meta();
        let mut info = SessionInfo {
            schema: SESSION_SCHEMA.into(),
            session_id: m.id.clone(),
            status: self.status(),
            created_unix_ms: m.created_unix_ms,
            n: m.n,
            p: m.p,
            feature_names: m.feature_names.clone(),
            classes: m.classes.clone(),
            family: None,
            d: None,
            bic: None,
            selection_table: Vec::new(),
            error: None,
        };
        match self {
            Entry::Ready(s) => {
                info.family = Some(s.classifier.family);
                info.d = Some(s.d);
                info.bic = s.bic;
                info.selection_table = s.selection.clone();
            }
            Entry::Failed(_, e) => info.error = Some(e.clone()),
            Entry::Fitting(_) => {}
        }
        info
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.meta().id.clone(),
            status: self.status(),
            created_unix_ms: self.meta().created_unix_ms,
        }
    }
}

/// Sessions by id. Entries are replaced whole, never edited in place.
#[derive(Default)]
pub struct Registry {
    map: RwLock<HashMap<String, Arc<Entry>>>,
}

impl Registry {
    pub fn get(&self, id: &str) -> Option<Arc<Entry>> {
        self.map.read().expect("registry poisoned").get(id).cloned()
    }

    pub fn insert(&self, entry: Entry) -> Arc<Entry> {
        let entry = Arc::new(entry);
        self.map
            .write()
            .expect("registry poisoned")
            .insert(entry.meta().id.clone(), entry.clone());
        entry
    }

    /// Swaps in `entry` only while the session still exists, so a fit that
    /// finishes after a delete does not resurrect it.
    pub fn replace_existing(&self, entry: Entry) -> bool {
        let mut map = self.map.write().expect("registry poisoned");
        match map.get_mut(&entry.meta().id) {
            Some(slot) => {
                *slot = Arc::new(entry);
                true
            }
            None => false,
        }
    }

    pub fn remove(&self, id: &str) -> bool {
        self.map.write().expect("registry poisoned").remove(id).is_some()
    }

    pub fn list(&self) -> Vec<SessionSummary> {
        let mut out: Vec<_> = self
            .map
            .read()
            .expect("registry poisoned")
            .values()
            .map(|e| e.summary())
            .collect();
        out.sort_by(|a, b| (a.created_unix_ms, &a.session_id).cmp(&(b.created_unix_ms, &b.session_id)));
        out
    }
}

//! Session state and its transitions, independent of HTTP.
//!
//! Sentences are addressed by slot: the source document's sentences first,
//! then the target's.

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use comatch_core::fusion::fuse_probs;
use comatch_core::matcher::{DecisionMode, MatchInput, Matcher, RelationConfig};
use comatch_core::{
    CasePair, EmbeddingMap, FusedDecision, HumanDecision, MachineDecision, PrototypeModel, SentenceRef,
};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationResult {
    pub relation: usize,
    pub score: f64,
    pub category_similarity: Vec<Option<f64>>,
    pub diagnostic: Option<String>,
    /// Sentences decided by the machine alone at finalization.
    pub machine_filled: Vec<SentenceRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub pair: CasePair,
    pub machine_decisions: Vec<MachineDecision>,
    pub human_decisions: Vec<Option<HumanDecision>>,
    pub fused: Vec<Option<FusedDecision>>,
    pub assigned_prototype: Vec<usize>,
    pub relation: Option<RelationResult>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// The fused outcome of one submitted decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedView {
    #[serde(flatten)]
    pub sentence_ref: SentenceRef,
    pub label: usize,
    pub posterior: Vec<f64>,
    pub argmax_label: usize,
    pub fallback_used: bool,
    pub prototype: usize,
    /// Row of the prototype's confusion matrix for the submitted label.
    pub confusion_row: Vec<f64>,
}

/// A session plus the embeddings it was created with.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub session: Session,
    pub embeddings: Vec<Vec<f64>>,
    slots: HashMap<SentenceRef, usize>,
}

fn refs(pair: &CasePair) -> Vec<SentenceRef> {
    pair.documents().into_iter().flat_map(|d| d.refs()).collect()
}

impl SessionState {
    /// Assign prototypes and freeze the machine decisions.
    pub fn create(
        session_id: String,
        pair: CasePair,
        machine: Vec<Vec<f64>>,
        embeddings: Vec<Vec<f64>>,
        model: &PrototypeModel,
        at: DateTime<Utc>,
    ) -> Result<Self, ApiError> {
        let refs = refs(&pair);
        let n = refs.len();
        if machine.len() != n || embeddings.len() != n {
            return Err(ApiError::BadRequest(format!(
                "{n} sentences but {} machine distributions and {} embeddings",
                machine.len(),
                embeddings.len()
            )));
        }
        let c = model.categories();
        let mut assigned = Vec::with_capacity(n);
        for (r, (m, e)) in refs.iter().zip(machine.iter().zip(&embeddings)) {
            if m.len() != c {
                return Err(ApiError::BadRequest(format!("{r}: {} machine probabilities for C = {c}", m.len())));
            }
            let sum: f64 = m.iter().sum();
            if m.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                return Err(ApiError::BadRequest(format!("{r}: machine probabilities are not a distribution")));
            }
            let a = model
                .assign(e)
                .map_err(|err| ApiError::BadRequest(format!("{r}: {err}")))?;
            if a.degenerate {
                log::warn!("{r}: degenerate embedding routed to prototype 0");
            }
            assigned.push(a.prototype);
        }
        let slots = refs.iter().cloned().enumerate().map(|(i, r)| (r, i)).collect();
        let machine_decisions = refs
            .into_iter()
            .zip(machine)
            .map(|(sentence_ref, probs)| MachineDecision { sentence_ref, probs })
            .collect();
        Ok(SessionState {
            session: Session {
                session_id,
                pair,
                machine_decisions,
                human_decisions: vec![None; n],
                fused: vec![None; n],
                assigned_prototype: assigned,
                relation: None,
                created_at: at,
                updated_at: at,
            },
            embeddings,
            slots,
        })
    }

    pub fn id(&self) -> &str {
        &self.session.session_id
    }

    /// Fuse each submitted label with its sentence's machine decision.
    ///
    /// The batch is validated as a whole before anything changes. Later
    /// entries for the same sentence win.
    pub fn submit(
        &mut self,
        decisions: &[HumanDecision],
        model: &PrototypeModel,
        at: DateTime<Utc>,
    ) -> Result<Vec<FusedView>, ApiError> {
        let c = model.categories();
        let mut slots = Vec::with_capacity(decisions.len());
        for d in decisions {
            let slot = *self
                .slots
                .get(&d.sentence_ref)
                .ok_or_else(|| ApiError::Unprocessable(format!("unknown sentence {}", d.sentence_ref)))?;
            if d.label >= c {
                return Err(ApiError::Unprocessable(format!(
                    "label {} for {} is not below C = {c}",
                    d.label, d.sentence_ref
                )));
            }
            slots.push(slot);
        }
        let s = &mut self.session;
        let mut out = Vec::with_capacity(decisions.len());
        for (d, slot) in decisions.iter().zip(slots) {
            let prototype = s.assigned_prototype[slot];
            let phi = &model.confusions[prototype];
            let (posterior, fallback) = fuse_probs(&s.machine_decisions[slot].probs, d.label, phi);
            let fused = FusedDecision::new(d.sentence_ref.clone(), posterior, fallback);
            out.push(FusedView {
                sentence_ref: d.sentence_ref.clone(),
                label: d.label,
                posterior: fused.posterior.clone(),
                argmax_label: fused.argmax_label,
                fallback_used: fused.fallback_used,
                prototype,
                confusion_row: phi.row(d.label).to_vec(),
            });
            s.human_decisions[slot] = Some(d.clone());
            s.fused[slot] = Some(fused);
        }
        if !decisions.is_empty() {
            s.relation = None;
            s.updated_at = at;
        }
        Ok(out)
    }

    pub fn unmarked(&self) -> usize {
        self.session.fused.iter().filter(|f| f.is_none()).count()
    }

    /// Predict the pair relation from the fused decisions.
    ///
    /// With `fill_machine`, unmarked sentences take the machine argmax;
    /// otherwise any unmarked sentence is a conflict.
    pub fn finalize(
        &mut self,
        fill_machine: bool,
        matcher: &dyn Matcher,
        config: &RelationConfig,
        mode: DecisionMode,
        at: DateTime<Utc>,
    ) -> Result<RelationResult, ApiError> {
        let unmarked = self.unmarked();
        if unmarked > 0 && !fill_machine {
            return Err(ApiError::Conflict(format!(
                "{unmarked} sentences have no human decision; mark them or set finalize_unmarked to \"machine\""
            )));
        }
        let s = &self.session;
        let c = s.machine_decisions.first().map_or(0, |m| m.probs.len());
        let mut machine_filled = Vec::new();
        let fused: Vec<FusedDecision> = s
            .fused
            .iter()
            .zip(&s.machine_decisions)
            .map(|(f, m)| match f {
                Some(f) => f.clone(),
                None => {
                    machine_filled.push(m.sentence_ref.clone());
                    FusedDecision::one_hot(m.sentence_ref.clone(), m.argmax(), c)
                }
            })
            .collect();
        let fused = mode.prepare(&fused);
        let (fs, ft) = fused.split_at(s.pair.source.len());
        let embeddings: EmbeddingMap = s
            .machine_decisions
            .iter()
            .map(|m| m.sentence_ref.clone())
            .zip(self.embeddings.iter().cloned())
            .collect();
        let outcome = matcher.match_pair(&MatchInput {
            pair: &s.pair,
            fused_source: fs,
            fused_target: ft,
            embeddings: &embeddings,
            config,
        })?;
        let result = RelationResult {
            relation: outcome.relation,
            score: outcome.score,
            category_similarity: outcome.category_similarity,
            diagnostic: outcome.diagnostic,
            machine_filled,
        };
        self.session.relation = Some(result.clone());
        self.session.updated_at = at;
        Ok(result)
    }
}

use clonekit::image::Image;
use clonekit::ledger::BudgetExhausted;
use clonekit::prob::ProbabilityVector;
use clonekit::victim::{BlackBox, VictimError, VictimMeta};
use ureq::Agent;

use crate::{ErrorBody, QueryRequest, QueryResponse};

/// [`BlackBox`] over HTTP.
pub struct HttpVictim {
    base: String,
    agent: Agent,
}

impl HttpVictim {
    pub fn new(base_url: &str) -> Self {
        let agent = Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn transport(e: impl std::fmt::Display) -> VictimError {
        VictimError::Transport(e.to_string())
    }

    fn decode_error(status: u16, body: &str) -> VictimError {
        match serde_json::from_str::<ErrorBody>(body) {
            Ok(ErrorBody::BudgetExhausted {
                requested,
                remaining,
                budget,
            }) => VictimError::BudgetExhausted(BudgetExhausted {
                requested,
                remaining,
                budget,
            }),
            Ok(ErrorBody::ShapeMismatch {
                index,
                expected,
                actual,
            }) => VictimError::ShapeMismatch {
                index,
                expected,
                actual,
            },
            Ok(other) => VictimError::Transport(format!("status {status}: {other:?}")),
            Err(_) => VictimError::Transport(format!("status {status}: {body}")),
        }
    }
}

impl BlackBox for HttpVictim {
    fn meta(&self) -> Result<VictimMeta, VictimError> {
        let mut resp = self
            .agent
            .get(&format!("{}/v1/meta", self.base))
            .call()
            .map_err(Self::transport)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(Self::transport)?;
        if status != 200 {
            return Err(Self::decode_error(status, &body));
        }
        serde_json::from_str(&body).map_err(Self::transport)
    }

    fn query(&self, batch: &[Image]) -> Result<Vec<ProbabilityVector>, VictimError> {
        let shape = batch.first().map(Image::shape).unwrap_or([0, 0, 0]);
        if let Some(index) = batch.iter().position(|img| img.shape() != shape) {
            return Err(VictimError::ShapeMismatch {
                index,
                expected: shape,
                actual: batch[index].shape(),
            });
        }
        let req = QueryRequest {
            images: batch.iter().map(|img| img.data().to_vec()).collect(),
            shape,
        };
        let mut resp = self
            .agent
            .post(&format!("{}/v1/query", self.base))
            .send_json(&req)
            .map_err(Self::transport)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(Self::transport)?;
        if status != 200 {
            return Err(Self::decode_error(status, &body));
        }
        let parsed: QueryResponse = serde_json::from_str(&body).map_err(Self::transport)?;
        if parsed.probs.len() != batch.len() {
            return Err(VictimError::Transport(format!(
                "{} responses for {} images",
                parsed.probs.len(),
                batch.len()
            )));
        }
        parsed
            .probs
            .into_iter()
            .map(|p| ProbabilityVector::new(p).map_err(VictimError::from))
            .collect()
    }
}

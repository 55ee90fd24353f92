use std::fs;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{decode_response, Perception, SegmentRequest, SegmentResponse};
use crate::backend::{BackendError, RetryPolicy};
use crate::model::{MaskTrack, VideoRef};

/// How frames travel in a segment request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameEncoding {
    /// Paths the server can resolve itself.
    #[default]
    Path,
    /// Inline base64 file contents.
    B64,
}

/// Client for a segmentation service speaking `POST /v1/segment`.
#[derive(Debug, Clone)]
pub struct HttpPerception {
    endpoint: String,
    agent: ureq::Agent,
    encoding: FrameEncoding,
    retry: RetryPolicy,
}

impl HttpPerception {
    pub fn new(base_url: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(600)))
            .build();
        Self {
            endpoint: format!("{}/v1/segment", base_url.trim_end_matches('/')),
            agent: ureq::Agent::new_with_config(config),
            encoding: FrameEncoding::Path,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_encoding(mut self, encoding: FrameEncoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn build_request(
        &self,
        video: &VideoRef,
        concept: &str,
    ) -> Result<SegmentRequest, BackendError> {
        let frames = match self.encoding {
            FrameEncoding::Path => video
                .frame_paths
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            FrameEncoding::B64 => video
                .frame_paths
                .iter()
                .map(|p| {
                    fs::read(p)
                        .map(|bytes| base64::engine::general_purpose::STANDARD.encode(bytes))
                        .map_err(|e| {
                            BackendError::Unavailable(format!("cannot read {}: {e}", p.display()))
                        })
                })
                .collect::<Result<_, _>>()?,
        };
        Ok(SegmentRequest {
            video_id: video.video_id.clone(),
            frames,
            width: video.width,
            height: video.height,
            concept: concept.to_string(),
            frame_encoding: self.encoding,
        })
    }

    fn post(&self, request: &SegmentRequest) -> Result<SegmentResponse, BackendError> {
        let transport = |e: ureq::Error| BackendError::Transport {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(request)
            .map_err(transport)?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .map_err(transport)?;
        if status != 200 {
            return Err(BackendError::Status {
                endpoint: self.endpoint.clone(),
                status,
                body,
            });
        }
        serde_json::from_str(&body).map_err(|e| BackendError::Protocol {
            endpoint: self.endpoint.clone(),
            message: e.to_string(),
        })
    }
}

impl Perception for HttpPerception {
    fn segment_concept(
        &self,
        video: &VideoRef,
        concept: &str,
    ) -> Result<Vec<MaskTrack>, BackendError> {
        let request = self.build_request(video, concept)?;
        let response = self.retry.run(|| self.post(&request))?;
        decode_response(response, video, concept, &self.endpoint)
    }
}

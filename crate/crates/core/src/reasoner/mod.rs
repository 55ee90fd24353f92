//! Multimodal chat reasoning backends, prompt templates and structured
//! reply parsing.

pub mod http;
pub mod parse;
pub mod prompt;
pub mod scripted;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::mask::BitMask;
use crate::model::TrackId;

pub use http::HttpReasoner;
pub use parse::{
    parse_concepts, parse_descriptions, parse_required, parse_verdicts, serialize_verdicts,
    ConceptResponse, ParseError, VerdictResponse,
};
pub use prompt::{
    render_prompt, Binding, Bindings, PromptError, PromptTemplate, TemplateId, TemplateSet,
};
pub use scripted::{
    Judge, OracleExpression, OracleScript, ScriptReply, ScriptRule, ScriptedReasoner,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

impl EncodedImage {
    pub fn png(bytes: Vec<u8>) -> Self {
        Self {
            media_type: "image/png".into(),
            bytes,
        }
    }

    pub fn to_data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.media_type,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }

    pub fn from_data_url(url: &str) -> Option<Self> {
        let rest = url.strip_prefix("data:")?;
        let (media_type, data) = rest.split_once(";base64,")?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(data)
            .ok()?;
        Some(Self {
            media_type: media_type.to_string(),
            bytes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    Image(EncodedImage),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            parts: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn user(parts: Vec<ContentPart>) -> Self {
        Self {
            role: Role::User,
            parts,
        }
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        Self::user(vec![ContentPart::Text(text.into())])
    }

    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, ContentPart::Image(_)))
            .count()
    }
}

/// The candidate masks drawn on one sampled frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMarks {
    pub frame: usize,
    pub marks: Vec<(TrackId, BitMask)>,
}

/// Structured facts about a request that travel alongside the rendered
/// messages. Remote backends ignore it; the scripted oracle keys on it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestContext {
    pub video_id: String,
    pub query: String,
    /// Extraction round `k`, or pruning iteration `r`.
    pub round: usize,
    /// Final pruning iteration: only accept or reject.
    pub binary: bool,
    /// Masks behind the attached images, one entry per image.
    pub marks: Vec<FrameMarks>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub template: TemplateId,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub context: RequestContext,
}

impl ChatRequest {
    /// One user message: the rendered prompt followed by labelled images.
    pub fn with_images(
        template: TemplateId,
        prompt: String,
        images: Vec<(String, EncodedImage)>,
        temperature: f64,
        max_tokens: u32,
        context: RequestContext,
    ) -> Self {
        let mut parts = vec![ContentPart::Text(prompt)];
        for (label, image) in images {
            parts.push(ContentPart::Text(label));
            parts.push(ContentPart::Image(image));
        }
        Self {
            template,
            messages: vec![ChatMessage::user(parts)],
            temperature,
            max_tokens,
            context,
        }
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(ChatMessage::image_count).sum()
    }
}

pub trait Reasoner: Send + Sync {
    /// Raw model text for the request.
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Error)]
pub enum AskError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

pub const REASK_INSTRUCTION: &str = "Your previous reply could not be used. Respond with valid JSON only, following the format requested above.";

/// Sends `request` and parses the reply. On a parse failure the malformed
/// reply is sent back once with a JSON-only instruction; a second failure
/// is returned as [`AskError::Parse`].
pub fn ask_json<T>(
    reasoner: &dyn Reasoner,
    request: &ChatRequest,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<T, AskError> {
    let attempt = |req: &ChatRequest| -> Result<Result<T, (String, ParseError)>, BackendError> {
        let text = match reasoner.complete(req) {
            Ok(text) => text,
            Err(BackendError::Truncated { partial }) => {
                log::warn!("reply truncated at {} tokens", req.max_tokens);
                partial
            }
            Err(e) => return Err(e),
        };
        Ok(parse(&text).map_err(|e| (text, e)))
    };
    match attempt(request)? {
        Ok(v) => Ok(v),
        Err((text, err)) => {
            log::debug!("re-asking after parse failure: {err}");
            let mut retry = request.clone();
            retry.messages.push(ChatMessage::user_text(format!(
                "{REASK_INSTRUCTION}\nProblem: {err}\nPrevious reply:\n{text}"
            )));
            attempt(&retry)?.map_err(|(_, e)| AskError::Parse(e))
        }
    }
}

//! Wire-level tests for the HTTP perception and reasoner clients against a
//! local mock server and the golden request/response files.

mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Duration;

use base64::Engine as _;
use common::{chat_reply, fixture, MockServer};
use serde_json::Value;
use trackprune::backend::{BackendError, RetryPolicy};
use trackprune::perception::{FrameEncoding, HttpPerception, Perception};
use trackprune::reasoner::{
    ask_json, parse_verdicts, ChatRequest, EncodedImage, HttpReasoner, Reasoner, RequestContext,
    TemplateId,
};
use trackprune::{PipelineConfig, TrackId, VerdictState, VideoRef};

fn golden_video() -> VideoRef {
    let frames = (0..3)
        .map(|t| PathBuf::from(format!("frames/v_golden/{t:05}.jpg")))
        .collect();
    VideoRef::new("v_golden", frames, 4, 3).unwrap()
}

fn quick_retry(n: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries: n,
        initial_backoff: Duration::from_millis(1),
    }
}

fn golden_chat_request() -> ChatRequest {
    let config = PipelineConfig::default();
    ChatRequest::with_images(
        TemplateId::Select,
        "Which objects match?".into(),
        vec![("Frame 3:".into(), EncodedImage::png(b"\x89PNG".to_vec()))],
        config.temperature,
        config.max_output_tokens,
        RequestContext::default(),
    )
}

#[test]
fn segment_request_and_response_match_golden_files() {
    let server = MockServer::start(vec![(200, fixture("wire/segment_response.json"))]);
    let client = HttpPerception::new(&server.url).with_retry(RetryPolicy::none());
    let tracks = client.segment_concept(&golden_video(), "red car").unwrap();
    let reqs = server.finish();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/v1/segment");
    let golden: Value = serde_json::from_str(&fixture("wire/segment_request.json")).unwrap();
    assert_eq!(reqs[0].json(), golden);

    // Column-major runs on a 4x3 frame: index i is pixel (i / 3, i % 3).
    assert_eq!(tracks.len(), 2);
    assert_eq!(tracks[0].track_id, TrackId(7));
    assert_eq!(tracks[0].concept, "red car");
    let f0 = tracks[0].masks[&0].raster();
    let fg0: Vec<(u32, u32)> = f0.foreground().collect();
    assert_eq!(fg0.len(), 2);
    assert!(f0.get(1, 1) && f0.get(1, 2));
    let f2 = tracks[0].masks[&2].raster();
    assert!((0..3).all(|y| f2.get(0, y)));
    assert_eq!(f2.foreground().count(), 3);
    assert!(!tracks[0].masks.contains_key(&1));
    let t9 = tracks[1].masks[&1].raster();
    assert_eq!(t9.foreground().collect::<Vec<_>>(), vec![(3, 2)]);
}

#[test]
fn base64_frame_encoding_inlines_file_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = (0..2)
        .map(|t| {
            let p = dir.path().join(format!("{t:05}.png"));
            std::fs::write(&p, [t as u8, 1, 2, 3]).unwrap();
            p
        })
        .collect();
    let video = VideoRef::new("v", paths, 4, 3).unwrap();
    let server = MockServer::start(vec![(200, r#"{"tracks": []}"#.into())]);
    let client = HttpPerception::new(&server.url)
        .with_encoding(FrameEncoding::B64)
        .with_retry(RetryPolicy::none());
    assert!(client.segment_concept(&video, "dog").unwrap().is_empty());
    let body = server.finish()[0].json();
    assert_eq!(body["frame_encoding"], "b64");
    let std = base64::engine::general_purpose::STANDARD;
    assert_eq!(body["frames"][0], std.encode([0u8, 1, 2, 3]));
    assert_eq!(body["frames"][1], std.encode([1u8, 1, 2, 3]));
}

#[test]
fn malformed_segment_responses_are_protocol_errors() {
    let bad = [
        r#"{"tracks": [{"track_id": 1, "masks": {"zero": {"size": [3, 4], "counts": [12]}}}]}"#,
        r#"{"tracks": [{"track_id": 1, "masks": {"0": {"size": [3, 5], "counts": [15]}}}]}"#,
        r#"{"tracks": [{"track_id": 1, "masks": {"9": {"size": [3, 4], "counts": [12]}}}]}"#,
        r#"{"tracks": [{"track_id": 1, "masks": {"0": {"size": [3, 4], "counts": [5]}}}]}"#,
        r#"{"tracks": "nope"}"#,
    ];
    for body in bad {
        let server = MockServer::start(vec![(200, body.into())]);
        let client = HttpPerception::new(&server.url).with_retry(RetryPolicy::none());
        let err = client.segment_concept(&golden_video(), "car").unwrap_err();
        assert!(
            matches!(err, BackendError::Protocol { .. }),
            "{body}: {err:?}"
        );
    }
}

#[test]
fn server_errors_are_retried_and_client_errors_are_not() {
    let server = MockServer::start(vec![
        (503, "busy".into()),
        (500, "oops".into()),
        (200, r#"{"tracks": []}"#.into()),
    ]);
    let client = HttpPerception::new(&server.url).with_retry(quick_retry(3));
    assert!(client
        .segment_concept(&golden_video(), "car")
        .unwrap()
        .is_empty());
    assert_eq!(server.finish().len(), 3);

    let server = MockServer::start(vec![(400, "empty concept".into())]);
    let client = HttpPerception::new(&server.url).with_retry(quick_retry(3));
    let err = client.segment_concept(&golden_video(), "car").unwrap_err();
    assert!(
        matches!(err, BackendError::Status { status: 400, .. }),
        "{err:?}"
    );
    assert_eq!(server.finish().len(), 1);

    let server = MockServer::start(vec![(503, "a".into()), (503, "b".into())]);
    let client = HttpPerception::new(&server.url).with_retry(quick_retry(1));
    let err = client.segment_concept(&golden_video(), "car").unwrap_err();
    assert!(
        matches!(err, BackendError::Status { status: 503, .. }),
        "{err:?}"
    );
}

#[test]
fn chat_payload_matches_golden_file_with_default_sampling() {
    let server = MockServer::start(vec![(200, fixture("wire/chat_response.json"))]);
    let client = HttpReasoner::new(&server.url, "local-vl")
        .with_api_key(None)
        .with_retry(RetryPolicy::none());
    let text = client.complete(&golden_chat_request()).unwrap();
    let reqs = server.finish();
    assert_eq!(reqs[0].path, "/chat/completions");
    let body = reqs[0].json();
    let golden: Value = serde_json::from_str(&fixture("wire/chat_request.json")).unwrap();
    assert_eq!(body, golden);
    assert_eq!(body["temperature"], 0.2);
    assert_eq!(body["max_tokens"], 8192);
    assert!(reqs[0].header("authorization").is_none());

    let ids = BTreeSet::from([TrackId(0), TrackId(1)]);
    let verdicts = parse_verdicts(&text, &ids).unwrap().verdicts;
    assert_eq!(verdicts[&TrackId(0)].state, VerdictState::Accepted);
    assert_eq!(verdicts[&TrackId(1)].state, VerdictState::Rejected);
}

#[test]
fn bearer_token_is_sent_when_configured() {
    let server = MockServer::start(vec![(200, chat_reply("ok", "stop"))]);
    let client = HttpReasoner::new(&server.url, "m")
        .with_api_key(Some("s3cret".into()))
        .with_retry(RetryPolicy::none());
    assert_eq!(client.complete(&golden_chat_request()).unwrap(), "ok");
    assert_eq!(
        server.finish()[0].header("authorization"),
        Some("Bearer s3cret")
    );
}

#[test]
fn content_given_as_parts_is_concatenated() {
    let body = serde_json::json!({
        "choices": [{"message": {"content": [{"type": "text", "text": "{\"required\": "}, {"type": "text", "text": "true}"}]}}]
    });
    let server = MockServer::start(vec![(200, body.to_string())]);
    let client = HttpReasoner::new(&server.url, "m").with_retry(RetryPolicy::none());
    assert_eq!(
        client.complete(&golden_chat_request()).unwrap(),
        "{\"required\": true}"
    );
}

#[test]
fn length_cutoff_is_truncated_and_partial_text_still_parses() {
    let partial = r#"{"verdicts": [{"id": 0, "verdict": "accept"}, {"id": 1, "verdict": "reject"}]} and then the model kept talk"#;
    let server = MockServer::start(vec![(200, chat_reply(partial, "length"))]);
    let client = HttpReasoner::new(&server.url, "m").with_retry(RetryPolicy::none());
    match client.complete(&golden_chat_request()) {
        Err(BackendError::Truncated { partial: p }) => assert_eq!(p, partial),
        other => panic!("expected truncation, got {other:?}"),
    }
    drop(server);

    let server = MockServer::start(vec![(200, chat_reply(partial, "length"))]);
    let client = HttpReasoner::new(&server.url, "m").with_retry(RetryPolicy::none());
    let ids = BTreeSet::from([TrackId(0), TrackId(1)]);
    let parsed = ask_json(&client, &golden_chat_request(), |t| parse_verdicts(t, &ids)).unwrap();
    assert_eq!(parsed.verdicts[&TrackId(0)].state, VerdictState::Accepted);
    assert_eq!(server.finish().len(), 1);
}

#[test]
fn malformed_reply_is_reasked_once_over_the_wire() {
    let server = MockServer::start(vec![
        (200, chat_reply("I think object 0.", "stop")),
        (
            200,
            chat_reply(r#"{"verdicts": [{"id": 0, "verdict": "accept"}]}"#, "stop"),
        ),
    ]);
    let client = HttpReasoner::new(&server.url, "m").with_retry(RetryPolicy::none());
    let ids = BTreeSet::from([TrackId(0)]);
    let parsed = ask_json(&client, &golden_chat_request(), |t| parse_verdicts(t, &ids)).unwrap();
    assert_eq!(parsed.verdicts[&TrackId(0)].state, VerdictState::Accepted);
    let reqs = server.finish();
    assert_eq!(reqs.len(), 2);
    let second = reqs[1].json();
    let messages = second["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    let text = messages[1]["content"][0]["text"].as_str().unwrap();
    assert!(text.contains("I think object 0."), "{text}");
    assert!(text.contains("valid JSON"), "{text}");
}

#[test]
fn missing_choices_is_a_protocol_error() {
    let server = MockServer::start(vec![(200, r#"{"choices": []}"#.into())]);
    let client = HttpReasoner::new(&server.url, "m").with_retry(RetryPolicy::none());
    let err = client.complete(&golden_chat_request()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol { .. }), "{err:?}");
}

#[test]
fn closed_port_is_reported_as_unreachable() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let url = format!("http://127.0.0.1:{port}");
    let err = HttpPerception::new(&url)
        .with_retry(RetryPolicy::none())
        .segment_concept(&golden_video(), "car")
        .unwrap_err();
    assert!(err.is_unreachable(), "{err:?}");
    let err = HttpReasoner::new(&url, "m")
        .with_retry(RetryPolicy::none())
        .complete(&golden_chat_request())
        .unwrap_err();
    assert!(err.is_unreachable(), "{err:?}");
}

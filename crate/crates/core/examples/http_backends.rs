//! The two HTTP clients. Without arguments this prints the request bodies
//! they would send for a generated video; with server URLs it also sends
//! them and decodes the replies.
//!
//! cargo run --example http_backends
//! cargo run --example http_backends -- http://localhost:8001 http://localhost:8000/v1 my-model

use serde_json::Value;
use trackprune::bench::{generate, BenchOptions};
use trackprune::eval::load_dataset;
use trackprune::frames::{encode_png, DiskFrames, FrameSource};
use trackprune::perception::{FrameEncoding, HttpPerception, Perception};
use trackprune::reasoner::{
    ask_json, parse_concepts, Bindings, ChatRequest, EncodedImage, HttpReasoner, RequestContext,
    TemplateId, TemplateSet,
};

/// Long strings (frame data, data URLs) cut down for printing.
fn shorten(v: &mut Value) {
    match v {
        Value::String(s) if s.len() > 72 => {
            *s = format!(
                "{}... ({} bytes)",
                s.chars().take(48).collect::<String>(),
                s.len()
            )
        }
        Value::Array(a) => a.iter_mut().for_each(shorten),
        Value::Object(o) => o.values_mut().for_each(shorten),
        _ => {}
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = std::env::temp_dir().join("trackprune-http");
    generate(&BenchOptions {
        videos: 1,
        frames: 12,
        ..Default::default()
    })
    .write(&dir)?;
    let ds = load_dataset(&dir.join("meta.json"), &dir.join("frames"))?;
    let video = ds.videos.values().next().unwrap();

    let perception =
        HttpPerception::new(args.first().map_or("http://localhost:8001", |s| s.as_str()));
    for encoding in [FrameEncoding::Path, FrameEncoding::B64] {
        let p = perception.clone().with_encoding(encoding);
        let mut body = serde_json::to_value(p.build_request(video, "car")?)?;
        shorten(&mut body);
        println!(
            "POST {}\n{}\n",
            p.endpoint(),
            serde_json::to_string_pretty(&body)?
        );
    }

    let reasoner = HttpReasoner::new(
        args.get(1)
            .map_or("http://localhost:8000/v1", |s| s.as_str()),
        args.get(2).map_or("default", |s| s.as_str()),
    );
    let mut b = Bindings::new();
    b.insert("query".into(), "the car that turns left".into());
    let prompt = TemplateSet::builtin().render(TemplateId::Referring, &b)?;
    let frame = EncodedImage::png(encode_png(&DiskFrames.frame(video, 0)?)?);
    let request = ChatRequest::with_images(
        TemplateId::Referring,
        prompt,
        vec![("Frame 0:".into(), frame)],
        0.2,
        8192,
        RequestContext::default(),
    );
    let mut body = reasoner.payload(&request);
    shorten(&mut body);
    println!(
        "POST {}\n{}\n",
        reasoner.endpoint(),
        serde_json::to_string_pretty(&body)?
    );

    if args.len() < 2 {
        println!("pass PERCEPTION_URL REASONER_URL [MODEL] to send these requests");
        return Ok(());
    }
    let tracks = perception.segment_concept(video, "car")?;
    for t in &tracks {
        println!("track {}: on {} frames", t.track_id, t.existence().len());
    }
    let reply = ask_json(&reasoner, &request, parse_concepts)?;
    println!("{:?}: {:?}", reply.query_type, reply.pairs);
    Ok(())
}

use std::io::{BufRead, BufReader, Read, Write};

use super::protocol::{
    decode_line, encode_line, ActivationPayload, EmbeddingPayload, Op, Request, Response,
    PROTOCOL_VERSION,
};
use super::{Backbone, CaptionModel};
use crate::error::Result;

/// Serves `model` over the bridge protocol until the input stream ends.
///
/// Requests are answered one at a time, in arrival order. Lines that fail to
/// parse get an `ok: false` response with id 0.
pub fn serve<M, R, W>(model: &M, input: R, mut output: W) -> Result<()>
where
    M: CaptionModel + ?Sized,
    R: Read,
    W: Write,
{
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        if line.trim().is_empty() {
            continue;
        }
        let response = match decode_line::<Request>(&line) {
            Ok(req) => handle(model, &req),
            Err(e) => Response::failure(0, e.to_string()),
        };
        output.write_all(encode_line(&response)?.as_bytes())?;
        output.flush()?;
    }
}

fn handle<M: CaptionModel + ?Sized>(model: &M, req: &Request) -> Response {
    let result = (|| -> Result<Response> {
        let mut resp = Response::ok(req.id);
        match req.op {
            Op::Hello => {
                resp.protocol_version = Some(PROTOCOL_VERSION.into());
                resp.capabilities =
                    Some(model.capabilities().iter().map(|c| c.to_string()).collect());
                resp.backbone = Some(
                    match model.backbone() {
                        Backbone::Cnn => "cnn",
                        Backbone::Vit => "vit",
                        Backbone::Other => "other",
                    }
                    .into(),
                );
            }
            Op::Caption => {
                resp.caption = Some(model.caption(&req.image()?, req.question.as_deref())?);
            }
            Op::Activations => {
                resp.activations = Some(ActivationPayload::encode(&model.activations(&req.image()?)?));
            }
            Op::Embed => {
                let text = req.text.as_deref().unwrap_or("");
                resp.embedding = Some(EmbeddingPayload::encode(&model.embed(text)?));
            }
            Op::Unknown => return Ok(Response::failure(req.id, "unknown op")),
        }
        Ok(resp)
    })();
    result.unwrap_or_else(|e| Response::failure(req.id, e.to_string()))
}

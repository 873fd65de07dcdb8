//! Stand-in detector process for protocol tests.
//!
//! Reads newline-delimited requests on stdin and answers every one with the
//! boxes given on the command line, labeled with the request prompt.

use std::io::{self, BufRead, Write};

use clap::Parser;
use maskgrasp::detector::external::{decode_request, encode_response};
use maskgrasp::detector::{BBox, Detection};

#[derive(Parser)]
#[command(about = "Answer detector requests with fixed boxes")]
struct Args {
    /// Box to return, `x0,y0,x1,y1[,score]`; repeat for several.
    #[arg(long = "box")]
    boxes: Vec<String>,
    /// Reply with a line that is not a valid response.
    #[arg(long)]
    malformed: bool,
    /// Answer this many requests normally before switching to malformed replies.
    #[arg(long, default_value_t = 0)]
    malformed_after: usize,
}

fn parse_box(s: &str) -> Result<(BBox, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect::<Result<_, _>>()?;
    let score = match v.len() {
        4 => 1.0,
        5 => v[4],
        _ => return Err(format!("`{s}`: expected 4 or 5 numbers")),
    };
    let b = BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())?;
    Ok((b, score))
}

fn main() {
    let args = Args::parse();
    let boxes: Vec<(BBox, f64)> = match args.boxes.iter().map(|s| parse_box(s)).collect() {
        Ok(b) => b,
        Err(e) => {
            eprintln!("mgrl-echo-detector: {e}");
            std::process::exit(1);
        }
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for (n, line) in stdin.lock().lines().enumerate() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match decode_request(&line) {
            Err(e) => {
                eprintln!("mgrl-echo-detector: bad request: {e}");
                continue;
            }
            Ok(_) if args.malformed || (args.malformed_after > 0 && n >= args.malformed_after) => {
                "{\"id\": \"not a number\", \"detections\": 3}".to_string()
            }
            Ok((req, _frame)) => {
                let dets: Vec<Detection> = boxes
                    .iter()
                    .map(|&(bbox, score)| Detection {
                        bbox,
                        score,
                        phrase: req.prompt.clone(),
                    })
                    .collect();
                encode_response(req.id, &dets)
            }
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
}

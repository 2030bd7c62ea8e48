//! The line-delimited oracle protocol, first as raw request/response lines
//! and then through an HTTP endpoint served from a background thread.
//!
//! Run with `cargo run --example remote_oracle`.

use std::net::TcpListener;

use stii::engine::{exact_stii, StiiConfig};
use stii::oracle::server::{handle_line, serve_http, ToyResponder};
use stii::{Instance, OracleHandle, OracleOptions, OracleSpec, ToyGameSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ToyGameSpec::decaying_interaction(5, 0.5);
    let responder = ToyResponder { game: spec.build()?, supports_batch: true };
    for request in [
        r#"{"op":"hello","schema_version":1}"#,
        r#"{"op":"eval","id":1,"masks":["11000","10100"]}"#,
        r#"{"op":"eval","id":2,"masks":["1"]}"#,
    ] {
        println!("> {request}");
        println!("< {}", handle_line(&responder, request));
    }

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let url = format!("http://{}/", listener.local_addr()?);
    let game = spec.build()?;
    std::thread::spawn(move || serve_http(&ToyResponder { game, supports_batch: true }, listener, None));

    let inst = Instance::toy("remote", 5, 1);
    let options = OracleOptions { max_in_flight: 2, ..Default::default() };
    let remote = OracleHandle::open(&OracleSpec::Http { url: url.clone() }, &inst, options)?;
    let local = OracleHandle::toy(&spec, &inst)?;
    for pair in [(0, 1), (0, 4)] {
        let a = exact_stii(&remote, &inst, pair, &StiiConfig::exact())?;
        let b = exact_stii(&local, &inst, pair, &StiiConfig::exact())?;
        println!("pair {pair:?}: over HTTP {a:.6}, in process {b:.6}");
    }
    println!("{url} answered {} mask evaluations", remote.call_count());
    Ok(())
}

mod common;

use common::{scorecard_job, small_store};
use sparecast_report::{assemble_report, execute_jobspec, HttpProvider};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::time::Duration;

/// Serves one canned JSON reply and returns the URL.
fn one_shot(reply: String) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming().take(4) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let resp = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                reply.len(),
                reply
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    format!("http://{addr}/narrate")
}

#[test]
fn http_provider_output_is_used_when_valid_and_replaced_when_not() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = small_store(dir.path(), true);
    let r = execute_jobspec(&store, &scorecard_job(&store)).unwrap();

    let good = r#"{"blocks":[{"text":"Accuracy holds.","claims":[],"provenance":"remote model"}]}"#;
    let a = assemble_report(&r, &HttpProvider::new(one_shot(good.into())));
    assert!(a.passed);
    assert!(a.narrative.as_ref().unwrap().values().all(|b| b[0].provenance == "remote model"));

    let bad = r#"{"blocks":[{"text":"WMAPE is 1%.","claims":[{"table":"summary","row":0,"column":"wmape_pct","value":"1"}],"provenance":"remote"}]}"#;
    let a = assemble_report(&r, &HttpProvider::new(one_shot(bad.into())));
    assert!(a.passed);
    for blocks in a.narrative.as_ref().unwrap().values() {
        assert!(blocks.iter().all(|b| b.provenance.starts_with("template (fallback: http narrative failed validation")));
    }

    let closed = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let mut p = HttpProvider::new(format!("http://{closed}/narrate"));
    p.timeout = Duration::from_secs(2);
    let a = assemble_report(&r, &p);
    assert!(a.passed);
    let first = &a.narrative.as_ref().unwrap().values().next().unwrap()[0];
    assert!(first.provenance.starts_with("template (fallback: narrative endpoint"), "{}", first.provenance);
}

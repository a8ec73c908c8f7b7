//! Dissect advertising payloads given as hex on the command line, or a few
//! built-in samples.
//!
//!     cargo run --example dissect_payload -- 02010603020F18

use btlemap::dissector::apple::dissect_apple;
use btlemap::dissector::{dissect, parse_ad_structures};

const SAMPLES: &[(&str, &str)] = &[
    ("flags + battery service", "02010603020F18"),
    ("iPhone nearby info", "0201060AFF4C0010051C1A2B3C44"),
    ("AirPods Pro lid open", "1EFF4C000719010E2000F58F010011223344556677889900AABBCCDDEEFF11"),
    ("truncated last structure", "0201060509414243"),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let inputs: Vec<(String, String)> = if args.is_empty() {
        SAMPLES.iter().map(|(n, h)| (n.to_string(), h.to_string())).collect()
    } else {
        args.iter().map(|h| (h.clone(), h.clone())).collect()
    };
    for (name, hex_payload) in inputs {
        let payload = match hex::decode(&hex_payload) {
            Ok(p) => p,
            Err(e) => {
                eprintln!("{name}: {e}");
                continue;
            }
        };
        println!("== {name} ({} bytes)", payload.len());
        print!("{}", dissect(&payload).render_text());

        // The typed view underneath the tree.
        if let Ok(parsed) = parse_ad_structures(&payload) {
            if let Some(msd) = parsed.manufacturer_data().filter(|m| m.len() >= 2 && m[..2] == [0x4C, 0x00]) {
                for msg in dissect_apple(&msd[2..]).messages {
                    println!("  continuity {:?}: {:?}", msg.type_name(), msg.body);
                }
            }
        }
        println!();
    }
}

//! Bluetooth SIG company identifiers, loaded from the shipped `company_ids.csv`.

use std::collections::HashMap;
use std::sync::OnceLock;

pub const APPLE: u16 = 0x004C;

const REGISTRY_CSV: &str = include_str!("../../data/company_ids.csv");

fn registry() -> &'static HashMap<u16, String> {
    static REGISTRY: OnceLock<HashMap<u16, String>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reader = csv::Reader::from_reader(REGISTRY_CSV.as_bytes());
        reader
            .records()
            .map(|r| r.expect("company registry is valid CSV"))
            .map(|r| {
                let id = r[0].trim_start_matches("0x");
                let id = u16::from_str_radix(id, 16).expect("company id is hex");
                (id, r[1].to_owned())
            })
            .collect()
    })
}

pub fn lookup_company(company_id: u16) -> Option<&'static str> {
    registry().get(&company_id).map(String::as_str)
}

/// Number of entries in the registry.
pub fn registry_len() -> usize {
    registry().len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apple() {
        assert_eq!(lookup_company(0x004C), Some("Apple, Inc."));
    }

    #[test]
    fn reserved_is_absent() {
        assert_eq!(lookup_company(0xFFFF), None);
    }

    #[test]
    fn microsoft_matches_data_file() {
        let line = REGISTRY_CSV.lines().find(|l| l.starts_with("0x0006,")).unwrap();
        assert_eq!(lookup_company(0x0006), Some(&line["0x0006,".len()..]));
    }

    #[test]
    fn registry_has_common_vendors() {
        assert!(registry_len() >= 21);
    }
}

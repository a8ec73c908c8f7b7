use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::advertisement::{MacAddr, RawAdvertisement};
use super::filter::DeviceFilter;
use super::trackable::{detect_trackable, payload_fields, FieldSample, TrackabilityFinding};
use super::IdentityError;
use crate::dissector::apple::{dissect_apple, ContinuityBody};
use crate::dissector::company::{lookup_company, APPLE};
use crate::dissector::{self, dissect, extract_tx_power, parse_ad_structures, DissectionNode, ParsedPayload};
use crate::gatt::{self, BleUuid, Fingerprint, FingerprintInput, Fingerprinter, GattService};

const SECOND_US: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct StoreConfig {
    /// How long a MAC keeps pointing at its device.
    pub mac_ttl_us: u64,
    /// How recently a device must have been heard to absorb a new MAC by payload match.
    pub link_window_us: u64,
    /// Manufacturer data shorter than this never links devices.
    pub min_link_bytes: usize,
    /// Retained advertisements (and RSSI samples) per device.
    pub history_capacity: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            mac_ttl_us: 15 * 60 * SECOND_US,
            link_window_us: 60 * SECOND_US,
            min_link_bytes: 4,
            history_capacity: 10_000,
        }
    }
}

/// Opaque identifier assigned at first sight. Sequential, so replays of the
/// same trace reproduce the same ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u64);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacSighting {
    pub mac: MacAddr,
    pub first_seen: u64,
    pub last_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RssiSample {
    pub device_id: DeviceId,
    pub timestamp_us: u64,
    pub rssi: i8,
    pub source_id: String,
}

/// An advertisement with its dissection computed once at ingest.
#[derive(Debug, Clone)]
pub struct StoredAdvertisement {
    /// Store-wide ingest sequence number.
    pub seq: u64,
    pub adv: RawAdvertisement,
    pub dissection: Arc<DissectionNode>,
    pub fields: Vec<FieldSample>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EnumerationStatus {
    #[default]
    NotRequested,
    Pending {
        since_us: u64,
    },
    Completed {
        at_us: u64,
    },
    Failed {
        at_us: u64,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrivacyFlag {
    /// The GATT Device Name differs from what the device advertises.
    RenamedDevice { advertised: Option<String>, gatt: String },
}

#[derive(Debug, Clone)]
pub struct DeviceRecord {
    pub device_id: DeviceId,
    pub macs: Vec<MacSighting>,
    pub advertisements: VecDeque<StoredAdvertisement>,
    pub total_advertisements: u64,
    pub rssi_track: VecDeque<RssiSample>,
    pub advertised_name: Option<String>,
    pub gatt_name: Option<String>,
    pub manufacturer: Option<String>,
    pub fingerprint: Fingerprint,
    pub gatt_services: Vec<GattService>,
    pub last_rssi: Option<i8>,
    pub tx_power: Option<i8>,
    pub first_seen: u64,
    pub last_seen: u64,
    pub last_source: String,
    pub enumeration: EnumerationStatus,
    pub privacy_flags: Vec<PrivacyFlag>,
    features: FingerprintInput,
    advertised_services: BTreeSet<BleUuid>,
    latest_msd: Option<Vec<u8>>,
}

impl DeviceRecord {
    fn new(device_id: DeviceId, adv: &RawAdvertisement) -> Self {
        Self {
            device_id,
            macs: Vec::new(),
            advertisements: VecDeque::new(),
            total_advertisements: 0,
            rssi_track: VecDeque::new(),
            advertised_name: None,
            gatt_name: None,
            manufacturer: None,
            fingerprint: Fingerprint::default(),
            gatt_services: Vec::new(),
            last_rssi: None,
            tx_power: None,
            first_seen: adv.timestamp_us,
            last_seen: adv.timestamp_us,
            last_source: adv.source_id.clone(),
            enumeration: EnumerationStatus::NotRequested,
            privacy_flags: Vec::new(),
            features: FingerprintInput::default(),
            advertised_services: BTreeSet::new(),
            latest_msd: None,
        }
    }

    /// GATT Device Name when known, otherwise the advertised name.
    pub fn name(&self) -> Option<&str> {
        self.gatt_name.as_deref().or(self.advertised_name.as_deref())
    }

    /// The most recently used address.
    pub fn current_mac(&self) -> MacAddr {
        self.macs.iter().max_by_key(|m| m.last_seen).map(|m| m.mac).expect("records hold at least one MAC")
    }

    pub fn fingerprint_input(&self) -> &FingerprintInput {
        &self.features
    }

    pub fn summary(&self) -> DeviceSummary {
        DeviceSummary {
            device_id: self.device_id,
            current_mac: self.current_mac(),
            macs: self.macs.clone(),
            name: self.name().map(str::to_owned),
            manufacturer: self.manufacturer.clone(),
            fingerprint: self.fingerprint.clone(),
            last_rssi: self.last_rssi,
            tx_power: self.tx_power,
            first_seen: self.first_seen,
            last_seen: self.last_seen,
            advertisement_count: self.total_advertisements,
            last_source: self.last_source.clone(),
            enumeration: self.enumeration.clone(),
            privacy_flags: self.privacy_flags.clone(),
        }
    }

    /// Full record with the latest `history_limit` advertisements.
    pub fn detail(&self, history_limit: usize) -> DeviceDetail {
        let skip = self.advertisements.len().saturating_sub(history_limit);
        let rssi_skip = self.rssi_track.len().saturating_sub(history_limit);
        DeviceDetail {
            summary: self.summary(),
            advertisements: self
                .advertisements
                .iter()
                .skip(skip)
                .map(|a| AdvertisementView { advertisement: a.adv.clone(), dissection: (*a.dissection).clone() })
                .collect(),
            rssi: self.rssi_track.iter().skip(rssi_skip).cloned().collect(),
            gatt_services: self.gatt_services.clone(),
            trackable_fields: detect_trackable(self),
        }
    }

    fn refresh_derived(&mut self, fingerprinter: &Fingerprinter) {
        self.features.service_uuids = self.advertised_services.clone();
        self.features.service_uuids.extend(self.gatt_services.iter().map(|s| s.uuid));
        self.features.names = self.advertised_name.iter().chain(self.gatt_name.iter()).cloned().collect();
        self.fingerprint = fingerprinter.fingerprint(&self.features);
        self.manufacturer = self
            .fingerprint
            .manufacturer
            .clone()
            .or_else(|| self.features.company_ids.iter().find_map(|id| lookup_company(*id)).map(str::to_owned));
        self.privacy_flags.clear();
        if let Some(gatt) = &self.gatt_name {
            if self.advertised_name.as_ref() != Some(gatt) {
                self.privacy_flags
                    .push(PrivacyFlag::RenamedDevice { advertised: self.advertised_name.clone(), gatt: gatt.clone() });
            }
        }
    }

    fn absorb_payload(&mut self, parsed: &ParsedPayload) {
        if let Some(tx) = extract_tx_power(&parsed.structures) {
            self.tx_power = Some(tx);
        }
        if let Some(name) = parsed.local_name() {
            self.advertised_name = Some(name);
        }
        for s in &parsed.structures {
            let width = match s.ad_type {
                dissector::AD_INCOMPLETE_UUID16 | dissector::AD_COMPLETE_UUID16 => 2,
                dissector::AD_INCOMPLETE_UUID32 | dissector::AD_COMPLETE_UUID32 => 4,
                dissector::AD_INCOMPLETE_UUID128 | dissector::AD_COMPLETE_UUID128 => 16,
                dissector::AD_SERVICE_DATA_UUID16 => {
                    if let Some(u) = s.value.get(..2).and_then(BleUuid::from_le_bytes) {
                        self.advertised_services.insert(u);
                    }
                    continue;
                }
                dissector::AD_MANUFACTURER_DATA if s.value.len() >= 2 => {
                    let company = u16::from_le_bytes([s.value[0], s.value[1]]);
                    self.features.company_ids.insert(company);
                    if company == APPLE {
                        for m in dissect_apple(&s.value[2..]).messages {
                            self.features.continuity_types.insert(m.message_type);
                            if let ContinuityBody::ProximityPairing(pp) = m.body {
                                self.features.apple_models.insert(pp.model);
                            }
                        }
                    }
                    continue;
                }
                _ => continue,
            };
            self.advertised_services.extend(s.value.chunks_exact(width).filter_map(BleUuid::from_le_bytes));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub device_id: DeviceId,
    pub current_mac: MacAddr,
    pub macs: Vec<MacSighting>,
    pub name: Option<String>,
    pub manufacturer: Option<String>,
    pub fingerprint: Fingerprint,
    pub last_rssi: Option<i8>,
    pub tx_power: Option<i8>,
    pub first_seen: u64,
    pub last_seen: u64,
    pub advertisement_count: u64,
    pub last_source: String,
    pub enumeration: EnumerationStatus,
    pub privacy_flags: Vec<PrivacyFlag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvertisementView {
    #[serde(flatten)]
    pub advertisement: RawAdvertisement,
    pub dissection: DissectionNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDetail {
    #[serde(flatten)]
    pub summary: DeviceSummary,
    pub advertisements: Vec<AdvertisementView>,
    pub rssi: Vec<RssiSample>,
    pub gatt_services: Vec<GattService>,
    pub trackable_fields: Vec<TrackabilityFinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub devices: Vec<DeviceSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreEvent {
    DeviceAppeared(DeviceId),
    DeviceUpdated(DeviceId),
    RssiSampleAdded(RssiSample),
    GattResult(DeviceId),
}

/// Session-scoped device store. Mutation goes through `&mut self`, so a
/// single writer is enforced by whoever owns it.
pub struct DeviceStore {
    config: StoreConfig,
    fingerprinter: Arc<Fingerprinter>,
    devices: BTreeMap<DeviceId, DeviceRecord>,
    mac_index: HashMap<MacAddr, DeviceId>,
    msd_index: HashMap<Vec<u8>, BTreeSet<DeviceId>>,
    next_id: u64,
    next_seq: u64,
}

impl Default for DeviceStore {
    fn default() -> Self {
        Self::new(StoreConfig::default())
    }
}

impl DeviceStore {
    pub fn new(config: StoreConfig) -> Self {
        Self::with_fingerprinter(config, Fingerprinter::builtin())
    }

    pub fn with_fingerprinter(config: StoreConfig, fingerprinter: Arc<Fingerprinter>) -> Self {
        Self {
            config,
            fingerprinter,
            devices: BTreeMap::new(),
            mac_index: HashMap::new(),
            msd_index: HashMap::new(),
            next_id: 1,
            next_seq: 0,
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn device(&self, id: DeviceId) -> Option<&DeviceRecord> {
        self.devices.get(&id)
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.devices.values()
    }

    /// The device a MAC was last attributed to, regardless of age.
    pub fn device_by_mac(&self, mac: MacAddr) -> Option<DeviceId> {
        self.mac_index.get(&mac).copied()
    }

    /// Number of ingested advertisements.
    pub fn total_ingested(&self) -> u64 {
        self.next_seq
    }

    /// Latest advertisement timestamp across all devices.
    pub fn latest_timestamp(&self) -> Option<u64> {
        self.devices.values().map(|d| d.last_seen).max()
    }

    /// Which existing device an advertisement belongs to.
    ///
    /// Precedence: the same MAC seen within `mac_ttl`; then a device heard
    /// within `link_window` whose latest manufacturer data is byte-identical
    /// (at least `min_link_bytes` long); otherwise none.
    pub fn match_device(&self, adv: &RawAdvertisement) -> Option<DeviceId> {
        let parsed = parse_ad_structures(&adv.payload).ok();
        self.match_parsed(adv, parsed.as_ref().and_then(|p| p.manufacturer_data()))
    }

    fn match_parsed(&self, adv: &RawAdvertisement, msd: Option<&[u8]>) -> Option<DeviceId> {
        if let Some(id) = self.mac_index.get(&adv.mac) {
            let record = &self.devices[id];
            let sighting = record.macs.iter().find(|m| m.mac == adv.mac).expect("indexed MAC has a sighting");
            if adv.timestamp_us.saturating_sub(sighting.last_seen) <= self.config.mac_ttl_us {
                return Some(*id);
            }
        }
        let msd = msd.filter(|m| m.len() >= self.config.min_link_bytes)?;
        self.msd_index
            .get(msd)?
            .iter()
            .map(|id| &self.devices[id])
            .filter(|d| adv.timestamp_us.saturating_sub(d.last_seen) <= self.config.link_window_us)
            .max_by_key(|d| (d.last_seen, Reverse(d.device_id)))
            .map(|d| d.device_id)
    }

    pub fn ingest(&mut self, adv: RawAdvertisement) -> Result<(DeviceId, Vec<StoreEvent>), IdentityError> {
        adv.validate()?;
        let parsed = parse_ad_structures(&adv.payload).expect("validated payload length");
        let msd = parsed.manufacturer_data().map(<[u8]>::to_vec);
        let matched = self.match_parsed(&adv, msd.as_deref());
        let mut events = Vec::with_capacity(2);
        let id = match matched {
            Some(id) => {
                events.push(StoreEvent::DeviceUpdated(id));
                id
            }
            None => {
                let id = DeviceId(self.next_id);
                self.next_id += 1;
                self.devices.insert(id, DeviceRecord::new(id, &adv));
                events.push(StoreEvent::DeviceAppeared(id));
                id
            }
        };

        let seq = self.next_seq;
        self.next_seq += 1;
        let capacity = self.config.history_capacity.max(1);
        let min_link = self.config.min_link_bytes;
        let record = self.devices.get_mut(&id).expect("device exists");

        match record.macs.iter_mut().find(|m| m.mac == adv.mac) {
            Some(s) => {
                s.first_seen = s.first_seen.min(adv.timestamp_us);
                s.last_seen = s.last_seen.max(adv.timestamp_us);
            }
            None => record.macs.push(MacSighting {
                mac: adv.mac,
                first_seen: adv.timestamp_us,
                last_seen: adv.timestamp_us,
            }),
        }
        self.mac_index.insert(adv.mac, id);

        if let Some(new) = msd {
            if record.latest_msd.as_ref() != Some(&new) {
                if let Some(old) = record.latest_msd.take() {
                    if let Some(set) = self.msd_index.get_mut(&old) {
                        set.remove(&id);
                        if set.is_empty() {
                            self.msd_index.remove(&old);
                        }
                    }
                }
                if new.len() >= min_link {
                    self.msd_index.entry(new.clone()).or_default().insert(id);
                }
                record.latest_msd = Some(new);
            }
        }

        record.first_seen = record.first_seen.min(adv.timestamp_us);
        record.last_seen = record.last_seen.max(adv.timestamp_us);
        record.last_rssi = Some(adv.rssi);
        record.last_source.clone_from(&adv.source_id);
        record.absorb_payload(&parsed);
        record.refresh_derived(&self.fingerprinter);

        let sample = RssiSample {
            device_id: id,
            timestamp_us: adv.timestamp_us,
            rssi: adv.rssi,
            source_id: adv.source_id.clone(),
        };
        if record.rssi_track.len() == capacity {
            record.rssi_track.pop_front();
        }
        record.rssi_track.push_back(sample.clone());
        if record.advertisements.len() == capacity {
            record.advertisements.pop_front();
        }
        record.advertisements.push_back(StoredAdvertisement {
            seq,
            dissection: Arc::new(dissect(&adv.payload)),
            fields: payload_fields(&adv.payload),
            adv,
        });
        record.total_advertisements += 1;
        events.push(StoreEvent::RssiSampleAdded(sample));
        Ok((id, events))
    }

    /// Replaces a device's GATT services and re-derives name and fingerprint.
    pub fn apply_gatt(&mut self, id: DeviceId, services: Vec<GattService>, at_us: u64) -> Option<Vec<StoreEvent>> {
        let fingerprinter = self.fingerprinter.clone();
        let record = self.devices.get_mut(&id)?;
        record.gatt_name = gatt::device_name(&services);
        record.gatt_services = services;
        record.enumeration = EnumerationStatus::Completed { at_us };
        record.refresh_derived(&fingerprinter);
        Some(vec![StoreEvent::GattResult(id), StoreEvent::DeviceUpdated(id)])
    }

    pub fn set_enumeration(&mut self, id: DeviceId, status: EnumerationStatus) -> Option<StoreEvent> {
        let record = self.devices.get_mut(&id)?;
        record.enumeration = status;
        Some(StoreEvent::DeviceUpdated(id))
    }

    /// Summaries of matching devices, most recently active first.
    pub fn query(&self, filter: &DeviceFilter, now_us: u64) -> Vec<DeviceSummary> {
        let mut matching: Vec<&DeviceRecord> = self.devices.values().filter(|d| filter.matches(d, now_us)).collect();
        matching.sort_by_key(|d| (Reverse(d.last_seen), d.device_id));
        matching.into_iter().map(DeviceRecord::summary).collect()
    }

    /// Devices whose latest advertisement is no older than `window_us`.
    pub fn recent_devices(&self, now_us: u64, window_us: u64) -> BTreeSet<DeviceId> {
        let cutoff = now_us.saturating_sub(window_us);
        self.devices.values().filter(|d| d.last_seen >= cutoff).map(|d| d.device_id).collect()
    }

    pub fn snapshot(&self, now_us: u64) -> StoreSnapshot {
        StoreSnapshot { devices: self.query(&DeviceFilter::default(), now_us) }
    }

    /// Retained RSSI samples in scope, ordered by timestamp then device.
    pub fn rssi_samples(
        &self,
        device_ids: Option<&BTreeSet<DeviceId>>,
        time_range: Option<Range<u64>>,
    ) -> Vec<&RssiSample> {
        let mut samples: Vec<&RssiSample> = self
            .devices
            .values()
            .filter(|d| device_ids.is_none_or(|ids| ids.contains(&d.device_id)))
            .flat_map(|d| d.rssi_track.iter())
            .filter(|s| time_range.as_ref().is_none_or(|r| r.contains(&s.timestamp_us)))
            .collect();
        samples.sort_by_key(|s| (s.timestamp_us, s.device_id));
        samples
    }

    /// RSSI history as `device_id,timestamp_us,rssi_dbm,source_id` CSV.
    pub fn export_rssi_csv(&self, device_ids: Option<&BTreeSet<DeviceId>>, time_range: Option<Range<u64>>) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .quote_style(csv::QuoteStyle::Necessary)
            .from_writer(Vec::new());
        w.write_record(["device_id", "timestamp_us", "rssi_dbm", "source_id"]).expect("in-memory write");
        for s in self.rssi_samples(device_ids, time_range) {
            w.write_record([
                s.device_id.to_string(),
                s.timestamp_us.to_string(),
                s.rssi.to_string(),
                s.source_id.clone(),
            ])
            .expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// Every retained advertisement in capture order.
    pub fn retained_advertisements(&self) -> Vec<&RawAdvertisement> {
        let mut all: Vec<&StoredAdvertisement> = self.devices.values().flat_map(|d| d.advertisements.iter()).collect();
        all.sort_by_key(|a| (a.adv.timestamp_us, a.seq));
        all.into_iter().map(|a| &a.adv).collect()
    }

    /// Writes retained advertisements as a linktype-256 pcap.
    pub fn export_pcap<W: io::Write>(&self, out: W) -> Result<usize, crate::sources::pcap::PcapError> {
        crate::sources::pcap::write_pcap(self.retained_advertisements(), out)
    }

    /// Digest of the device partition: which advertisements (by time, MAC
    /// and payload) were attributed to which device.
    pub fn partition_hash(&self) -> String {
        let mut h = Sha256::new();
        for d in self.devices.values() {
            h.update(d.device_id.0.to_le_bytes());
            h.update((d.advertisements.len() as u64).to_le_bytes());
            for a in &d.advertisements {
                h.update(a.adv.timestamp_us.to_le_bytes());
                h.update(a.adv.mac.0);
                h.update([a.adv.rssi as u8, a.adv.payload.len() as u8]);
                h.update(&a.adv.payload);
            }
        }
        hex::encode(h.finalize())
    }
}

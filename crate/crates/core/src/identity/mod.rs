//! The central data store: attribution of advertisements to devices,
//! RSSI history, filters, recency, CSV export and trackable identifiers.

mod advertisement;
mod filter;
mod store;
pub mod trackable;

pub use advertisement::{AddressType, MacAddr, PduType, RawAdvertisement, ADVERTISING_CHANNELS, RSSI_MAX, RSSI_MIN};
pub use filter::DeviceFilter;
pub use store::{
    AdvertisementView, DeviceDetail, DeviceId, DeviceRecord, DeviceStore, DeviceSummary, EnumerationStatus,
    MacSighting, PrivacyFlag, RssiSample, StoreConfig, StoreEvent, StoreSnapshot, StoredAdvertisement,
};
pub use trackable::{detect_trackable, TrackabilityFinding};

pub(crate) use advertisement::hex_bytes;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("invalid advertisement: {0}")]
    InvalidAdvertisement(String),
    #[error("invalid MAC address '{0}'")]
    BadMac(String),
}

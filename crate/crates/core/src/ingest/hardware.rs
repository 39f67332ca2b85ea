//! Siemens order-number extraction from service banners.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const DEFAULT_VENDOR: &str = "Siemens";

/// Third-party manufacturers known to ship S7-compatible CPUs.
const KNOWN_VENDORS: &[(&str, &str)] = &[("INSEVIS", "INSEVIS"), ("VIPA", "VIPA")];

/// A normalized hardware order number seen in a banner.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HardwareModel {
    pub vendor: String,
    pub model: String,
}

impl HardwareModel {
    pub fn siemens(model: &str) -> Self {
        HardwareModel {
            vendor: DEFAULT_VENDOR.to_string(),
            model: normalize(model),
        }
    }
}

// Order numbers look like `6ES7 315-2EH14-0AB0`: three digits, then a
// five-character and a four-character alphanumeric group.
static SIEMENS_ORDER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b6ES7\s*(\d{3})\s*-\s*([0-9A-Z]{5})\s*-\s*([0-9A-Z]{4})\b").unwrap()
});

static VENDOR_ORDER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(INSEVIS|VIPA)\s+(\d{3})\s*-\s*([0-9A-Z]{5})\s*-\s*([0-9A-Z]{4})\b").unwrap()
});

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_uppercase()
}

fn banner_vendor(upper: &str) -> Option<&'static str> {
    KNOWN_VENDORS.iter().find_map(|(needle, vendor)| {
        upper
            .split(|c: char| !c.is_ascii_alphanumeric())
            .any(|word| word == *needle)
            .then_some(*vendor)
    })
}

/// All distinct order numbers in `banner`.
///
/// `6ES7` numbers are attributed to a third-party vendor when the banner
/// names one, otherwise to Siemens. Vendor-prefixed numbers without the
/// `6ES7` stem (e.g. `VIPA 315-4NE12-0110`) keep the prefix in the model.
pub fn extract_hardware_strings(banner: &str) -> BTreeSet<HardwareModel> {
    let upper = banner.to_uppercase();
    let vendor = banner_vendor(&upper).unwrap_or(DEFAULT_VENDOR);
    let mut out = BTreeSet::new();
    for cap in SIEMENS_ORDER.captures_iter(&upper) {
        out.insert(HardwareModel {
            vendor: vendor.to_string(),
            model: format!("6ES7 {}-{}-{}", &cap[1], &cap[2], &cap[3]),
        });
    }
    for cap in VENDOR_ORDER.captures_iter(&upper) {
        out.insert(HardwareModel {
            vendor: cap[1].to_string(),
            model: format!("{} {}-{}-{}", &cap[1], &cap[2], &cap[3], &cap[4]),
        });
    }
    out
}

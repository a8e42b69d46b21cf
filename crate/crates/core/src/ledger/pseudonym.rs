use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::LedgerError;

/// Environment variable holding the passphrase for the pseudonym map file.
pub const MAP_PASSPHRASE_ENV: &str = "SCANGRADE_MAP_PASSPHRASE";

const PSEUDONYM_HEX_LEN: usize = 12;
const KDF_ROUNDS: u32 = 100_000;

/// Keyed, injective mapping from roster student numbers to pseudonyms.
///
/// The map is the only place that links the two; it is stored encrypted and
/// outside every job directory.
#[derive(Clone, PartialEq, Eq)]
pub struct PseudonymMap {
    salt: [u8; 32],
    entries: BTreeMap<String, String>,
}

impl std::fmt::Debug for PseudonymMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PseudonymMap")
            .field("entries", &self.entries.len())
            .finish_non_exhaustive()
    }
}

fn keyed_digest(salt: &[u8; 32], student_number: &str) -> String {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(salt).expect("any key length");
    mac.update(student_number.as_bytes());
    let tag = mac.finalize().into_bytes();
    hex::encode(tag)[..PSEUDONYM_HEX_LEN].to_string()
}

#[derive(Serialize, Deserialize)]
struct Plain {
    salt: String,
    roster: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    version: u32,
    kdf: String,
    rounds: u32,
    kdf_salt: String,
    nonce: String,
    ciphertext: String,
}

fn derive_key(passphrase: &str, kdf_salt: &[u8], rounds: u32) -> Key {
    let mut key = [0u8; 32];
    pbkdf2::pbkdf2_hmac::<Sha256>(passphrase.as_bytes(), kdf_salt, rounds, &mut key);
    Key::from(key)
}

impl PseudonymMap {
    /// Build the map for a roster under a fresh random salt.
    pub fn generate(roster: &[String]) -> Result<Self, LedgerError> {
        let mut salt = [0u8; 32];
        rand::rng().fill_bytes(&mut salt);
        Self::with_salt(roster, salt)
    }

    pub fn with_salt(roster: &[String], salt: [u8; 32]) -> Result<Self, LedgerError> {
        let mut entries = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for number in roster {
            let number = number.trim().to_string();
            let pseudonym = keyed_digest(&salt, &number);
            if !seen.insert(pseudonym.clone()) {
                return Err(if entries.contains_key(&number) {
                    LedgerError::DuplicateStudent(number)
                } else {
                    LedgerError::PseudonymCollision
                });
            }
            entries.insert(number, pseudonym);
        }
        Ok(PseudonymMap { salt, entries })
    }

    pub fn pseudonymise(&self, student_number: &str) -> Result<&str, LedgerError> {
        self.entries
            .get(student_number.trim())
            .map(String::as_str)
            .ok_or(LedgerError::UnknownStudent)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn student_numbers(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// All pseudonyms, sorted.
    pub fn pseudonyms(&self) -> Vec<String> {
        let mut out: Vec<_> = self.entries.values().cloned().collect();
        out.sort();
        out
    }

    /// The same salt applied to a (possibly extended) roster.
    pub fn extended(&self, roster: &[String]) -> Result<Self, LedgerError> {
        Self::with_salt(roster, self.salt)
    }

    pub fn save_encrypted(
        &self,
        path: impl AsRef<Path>,
        passphrase: &str,
    ) -> Result<(), LedgerError> {
        let plain = serde_json::to_vec(&Plain {
            salt: hex::encode(self.salt),
            roster: self.entries.keys().cloned().collect(),
        })
        .expect("map serialises");
        let mut kdf_salt = [0u8; 16];
        let mut nonce = [0u8; 12];
        rand::rng().fill_bytes(&mut kdf_salt);
        rand::rng().fill_bytes(&mut nonce);
        let cipher = ChaCha20Poly1305::new(&derive_key(passphrase, &kdf_salt, KDF_ROUNDS));
        let ciphertext = cipher
            .encrypt(Nonce::from_slice(&nonce), plain.as_slice())
            .map_err(|e| LedgerError::MapCrypto(e.to_string()))?;
        let envelope = Envelope {
            version: 1,
            kdf: "pbkdf2-hmac-sha256".into(),
            rounds: KDF_ROUNDS,
            kdf_salt: B64.encode(kdf_salt),
            nonce: B64.encode(nonce),
            ciphertext: B64.encode(ciphertext),
        };
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(
            path,
            serde_json::to_string_pretty(&envelope).expect("envelope serialises") + "\n",
        )?;
        Ok(())
    }

    pub fn load_encrypted(path: impl AsRef<Path>, passphrase: &str) -> Result<Self, LedgerError> {
        let text = std::fs::read_to_string(path)?;
        let bad = |what: &str| LedgerError::MapCrypto(format!("malformed map file: {what}"));
        let envelope: Envelope = serde_json::from_str(&text).map_err(|_| bad("envelope"))?;
        if envelope.version != 1 {
            return Err(bad("version"));
        }
        let kdf_salt = B64
            .decode(&envelope.kdf_salt)
            .map_err(|_| bad("kdf_salt"))?;
        let nonce = B64.decode(&envelope.nonce).map_err(|_| bad("nonce"))?;
        let ciphertext = B64
            .decode(&envelope.ciphertext)
            .map_err(|_| bad("ciphertext"))?;
        if nonce.len() != 12 {
            return Err(bad("nonce"));
        }
        let cipher = ChaCha20Poly1305::new(&derive_key(passphrase, &kdf_salt, envelope.rounds));
        let plain = cipher
            .decrypt(Nonce::from_slice(&nonce), ciphertext.as_slice())
            .map_err(|_| LedgerError::MapCrypto("wrong passphrase or corrupted file".into()))?;
        let plain: Plain = serde_json::from_slice(&plain).map_err(|_| bad("payload"))?;
        let mut salt = [0u8; 32];
        hex::decode_to_slice(&plain.salt, &mut salt).map_err(|_| bad("salt"))?;
        Self::with_salt(&plain.roster, salt)
    }
}

/// Read a roster file: one student number per line, or a CSV whose first
/// column holds them. Lines without a digit are treated as headers.
pub fn read_roster(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| line.split(',').next())
        .map(str::trim)
        .filter(|s| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit()))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster() -> Vec<String> {
        vec!["4810273".into(), "4810274".into(), "5903311".into()]
    }

    #[test]
    fn stable_and_injective() {
        let map = PseudonymMap::with_salt(&roster(), [7; 32]).unwrap();
        let a = map.pseudonymise("4810273").unwrap().to_string();
        assert_eq!(map.pseudonymise("4810273").unwrap(), a);
        assert_ne!(map.pseudonymise("4810274").unwrap(), a);
        assert_eq!(a.len(), 12);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        assert!(matches!(
            map.pseudonymise("1111111"),
            Err(LedgerError::UnknownStudent)
        ));
    }

    #[test]
    fn salt_changes_pseudonyms() {
        let a = PseudonymMap::with_salt(&roster(), [1; 32]).unwrap();
        let b = PseudonymMap::with_salt(&roster(), [2; 32]).unwrap();
        assert_ne!(a.pseudonyms(), b.pseudonyms());
    }

    #[test]
    fn duplicate_roster_entry() {
        let mut r = roster();
        r.push("5903311".into());
        assert!(matches!(
            PseudonymMap::with_salt(&r, [0; 32]),
            Err(LedgerError::DuplicateStudent(_))
        ));
    }

    #[test]
    fn encrypted_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.json");
        let map = PseudonymMap::generate(&roster()).unwrap();
        map.save_encrypted(&path, "correct horse").unwrap();
        let on_disk = std::fs::read_to_string(&path).unwrap();
        for number in roster() {
            assert!(!on_disk.contains(&number));
        }
        assert_eq!(
            PseudonymMap::load_encrypted(&path, "correct horse").unwrap(),
            map
        );
        assert!(matches!(
            PseudonymMap::load_encrypted(&path, "wrong"),
            Err(LedgerError::MapCrypto(_))
        ));
    }

    #[test]
    fn roster_parsing() {
        let text = "student_number,name\n4810273,x\n\n 5903311 \n";
        assert_eq!(read_roster(text), vec!["4810273", "5903311"]);
    }
}

use std::sync::{Arc, Mutex};

use flowline::{FlowField, ImageBuf, LineControlMatrix};
use lru::LruCache;
use rand::RngCore;
use tokio::sync::OnceCell;

/// Field plus its two encodings, computed together the first time any of
/// them is requested.
#[derive(Debug)]
pub struct EtfData {
    pub field: FlowField,
    pub flo: Vec<u8>,
    pub png: Vec<u8>,
}

#[derive(Debug)]
pub struct ImageEntry {
    pub image: ImageBuf,
    pub png: Vec<u8>,
    pub etf: OnceCell<Arc<EtfData>>,
}

#[derive(Debug)]
pub struct LcmEntry {
    pub image_id: String,
    pub lcm: LineControlMatrix,
}

#[derive(Clone, Debug)]
pub enum Item {
    Image(Arc<ImageEntry>),
    Lcm(Arc<LcmEntry>),
}

impl Item {
    /// Approximate resident size, including a lazily computed field.
    fn cost(&self) -> usize {
        match self {
            Item::Image(e) => {
                let px = e.image.width() * e.image.height();
                e.image.data().len() * 8 + e.png.len() + px * (3 * 8 + 12) + px * 3
            }
            Item::Lcm(e) => e.lcm.data().len() * 8,
        }
    }
}

struct Inner {
    items: LruCache<String, (Item, usize)>,
    bytes: usize,
}

/// In-memory session store with least-recently-used eviction under a byte
/// budget. Ids are random 128-bit hex strings.
pub struct SessionStore {
    inner: Mutex<Inner>,
    budget: usize,
}

impl SessionStore {
    pub fn new(budget_bytes: usize) -> Self {
        SessionStore {
            inner: Mutex::new(Inner {
                items: LruCache::unbounded(),
                bytes: 0,
            }),
            budget: budget_bytes,
        }
    }

    fn new_id() -> String {
        let mut raw = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut raw);
        hex::encode(raw)
    }

    /// Stores an item and evicts the oldest others until the budget holds.
    /// The new item itself is always kept.
    pub fn insert(&self, item: Item) -> String {
        let cost = item.cost();
        let mut inner = self.inner.lock().expect("store lock");
        let id = loop {
            let id = Self::new_id();
            if !inner.items.contains(&id) {
                break id;
            }
        };
        inner.items.put(id.clone(), (item, cost));
        inner.bytes += cost;
        while inner.bytes > self.budget && inner.items.len() > 1 {
            match inner.items.pop_lru() {
                Some((_, (_, c))) => inner.bytes -= c,
                None => break,
            }
        }
        id
    }

    pub fn get(&self, id: &str) -> Option<Item> {
        let mut inner = self.inner.lock().expect("store lock");
        inner.items.get(id).map(|(item, _)| item.clone())
    }

    pub fn image(&self, id: &str) -> Option<Arc<ImageEntry>> {
        match self.get(id)? {
            Item::Image(e) => Some(e),
            Item::Lcm(_) => None,
        }
    }

    pub fn lcm(&self, id: &str) -> Option<Arc<LcmEntry>> {
        match self.get(id)? {
            Item::Lcm(e) => Some(e),
            Item::Image(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bytes(&self) -> usize {
        self.inner.lock().expect("store lock").bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcm_item(n: usize) -> Item {
        Item::Lcm(Arc::new(LcmEntry {
            image_id: String::new(),
            lcm: LineControlMatrix::constant(n, n, 0.5).unwrap(),
        }))
    }

    #[test]
    fn evicts_least_recently_used() {
        // Each 10x10 matrix costs 800 bytes.
        let store = SessionStore::new(2000);
        let a = store.insert(lcm_item(10));
        let b = store.insert(lcm_item(10));
        assert!(store.get(&a).is_some());
        let c = store.insert(lcm_item(10));
        assert!(store.get(&b).is_none());
        assert!(store.get(&a).is_some() && store.get(&c).is_some());
        assert_eq!(store.bytes(), 1600);
    }

    #[test]
    fn oversized_item_is_kept_alone() {
        let store = SessionStore::new(100);
        let a = store.insert(lcm_item(10));
        let b = store.insert(lcm_item(10));
        assert!(store.get(&a).is_none());
        assert!(store.get(&b).is_some());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn ids_are_128_bit_hex() {
        let store = SessionStore::new(1 << 20);
        let id = store.insert(lcm_item(2));
        assert_eq!(id.len(), 32);
        assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
        assert!(store.image(&id).is_none() && store.lcm(&id).is_some());
    }
}

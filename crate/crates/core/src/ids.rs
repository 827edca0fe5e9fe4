//! Identifier newtypes shared by the world, the ledger and the event log.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Catalog index of a structure kind. Birth order: kind `i` was invented before kind `i + 1`.
    KindId,
    "kind"
);
id_type!(
    /// A live or dead structure instance. Never reused within a world.
    InstanceId,
    "inst"
);
id_type!(
    /// An enerstatic loop.
    LoopId,
    "loop"
);
id_type!(
    /// An energy channel between two loops.
    ChannelId,
    "chan"
);

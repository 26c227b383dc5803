"""weakkv - Core Module"""

from app.core.engine import Engine, Transaction
from app.core.errors import TransactionAborted, WeakKVError
from app.core.index import SENTINEL, Index, LocationTag, RecordLocation
from app.core.protocol import ClientState, ServerState
from app.core.shadow import ShadowPager
from app.core.storage import CrashSimDevice, FileDevice, SubsetChoice

__all__ = [
    "Engine",
    "Transaction",
    "TransactionAborted",
    "WeakKVError",
    "SENTINEL",
    "Index",
    "LocationTag",
    "RecordLocation",
    "ClientState",
    "ServerState",
    "ShadowPager",
    "CrashSimDevice",
    "FileDevice",
    "SubsetChoice"
]

"""DEX容器模型、解析与序列化"""

from .model import (
    ClassDef,
    CodeItem,
    DexFile,
    DexHeader,
    EncodedField,
    EncodedMethod,
    FieldRef,
    Handler,
    Instruction,
    MethodRef,
    ProtoRef,
    TryItem,
)
from .query import CallSite, TryBlockSite, dex_stats, find_protected_invocations, find_try_blocks
from .reader import parse_dex
from .writer import sync_pools, write_dex

__all__ = [
    "CallSite",
    "ClassDef",
    "CodeItem",
    "DexFile",
    "DexHeader",
    "EncodedField",
    "EncodedMethod",
    "FieldRef",
    "Handler",
    "Instruction",
    "MethodRef",
    "ProtoRef",
    "TryBlockSite",
    "TryItem",
    "dex_stats",
    "find_protected_invocations",
    "find_try_blocks",
    "parse_dex",
    "sync_pools",
    "write_dex",
]

"""mdsm文本汇编与反汇编"""

from .assembler import assemble, assemble_file
from .disassembler import disassemble

__all__ = ["assemble", "assemble_file", "disassemble"]

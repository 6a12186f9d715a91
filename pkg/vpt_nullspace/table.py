# -*- coding: utf-8 -*-

import os
import sys

from .utils import remove_ansi_escape


class Table:
    """
    A console table. `table_def` is a list of column definitions with the keys `name` (header),
    `value` (a `{field}` placeholder naming a key of the row dict), and optionally `format(cdef, value, entry)`, `justify`
    (`left` or `right`), `mlen` (maximal width) and `help`.
    """

    def __init__(self, table_def):
        self.table_def = [dict(c) for c in table_def]
        self.data = []

    def format_item(self, cdef, value, skipformat=False, entry=None, adjust=True):
        if cdef.get("format") and not skipformat:
            try:
                v = str(cdef["format"](cdef, value, entry))
            except Exception:
                v = "E!"
        else:
            v = str(value) if value is not None else "-"

        asize = 0
        if adjust and cdef.get("_len"):
            asize = cdef["_len"] + 2
        if cdef.get("mlen") and len(remove_ansi_escape(v)) > cdef["mlen"]:
            v = v[: cdef["mlen"] - 1] + "…"

        padding = " " * max(0, asize - len(remove_ansi_escape(v)))
        if cdef.get("justify") == "right":
            return padding + v
        return v + padding

    def eval_value(self, value, data):
        # "{field}" placeholders name a key of the row dict
        if value and value.startswith("{") and value.endswith("}"):
            return data.get(value[1:-1])
        return value

    def calc_col_sizes(self):
        for cdef in self.table_def:
            cdef["_len"] = len(cdef["name"])
            for e in self.data:
                l = len(remove_ansi_escape(self.format_item(cdef, self.eval_value(cdef["value"], e), entry=e, adjust=False)))
                if l > cdef["_len"]:
                    cdef["_len"] = l
            if cdef.get("mlen") is not None and cdef["_len"] > cdef["mlen"]:
                cdef["_len"] = cdef["mlen"]

    def getTerminalCols(self):
        try:
            return os.get_terminal_size().columns
        except OSError:
            return 100000

    def display(self, data, noterm=False, file=None):
        """
        Write the header and one line per row dict to `file` (standard output by default).
        Returns the number of lines written.
        """
        out = file or sys.stdout
        self.data = list(data)
        self.calc_col_sizes()

        lines = ["".join(self.format_item(cdef, cdef["name"], skipformat=True, adjust=not noterm) for cdef in self.table_def)]
        for e in self.data:
            lines.append(
                "".join(
                    self.format_item(cdef, self.eval_value(cdef["value"], e), entry=e, adjust=not noterm) for cdef in self.table_def
                )
            )

        cols = self.getTerminalCols() if not noterm and out.isatty() else 100000
        for line in lines:
            out.write("%s\n" % line.rstrip()[0:cols])
        return len(lines)

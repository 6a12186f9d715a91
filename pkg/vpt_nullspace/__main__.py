# -*- coding: utf-8 -*-

from vpt_nullspace.commands.vptns import vptns

if __name__ == "__main__":
    vptns(prog_name="vptns")

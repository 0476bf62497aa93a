# -*- coding: utf-8 -*-
# models - 各評分函數，每個檔案一個類別，由 scoring.py 登錄

"""胃内容量評価パイプライン - メインパッケージ.

二体位（RLD / SUP）の胃超音波画像から、半教師ありセグメンテーションで
胃前庭部の確率マップを推定し、その確率マップで誘導した二分岐分類器で
胃内容量クラス (I / II / III) を判定する。
"""

__version__ = "0.1.0"

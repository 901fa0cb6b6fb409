import torch


class KVCache:
    """Chaves/valores por camada das posições já geradas do stream principal"""

    def __init__(self, n_layers):
        self._keys = [None] * n_layers
        self._values = [None] * n_layers

    @property
    def length(self):
        return 0 if self._keys[0] is None else self._keys[0].size(2)

    def get(self, layer):
        return self._keys[layer], self._values[layer]

    def append(self, layer, keys, values):
        """Única mutação permitida: concatenar ao final"""
        if keys.size(2) == 0:
            return
        if self._keys[layer] is None:
            self._keys[layer], self._values[layer] = keys, values
        else:
            self._keys[layer] = torch.cat([self._keys[layer], keys], dim=2)
            self._values[layer] = torch.cat([self._values[layer], values], dim=2)

    def reorder(self, index):
        """Reordena o lote (hipóteses do beam) segundo index"""
        self._keys = [None if k is None else k.index_select(0, index) for k in self._keys]
        self._values = [None if v is None else v.index_select(0, index) for v in self._values]

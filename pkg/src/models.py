from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.settings import Configuracao


def _somente_leitura(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def circular_angle_difference(a: float, b: float) -> float:
    """Diferença angular circular min(d, 360 - d) em graus"""
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Nuvem de pontos (coordenadas de modelo, sem unidade)."""
    points: np.ndarray  # (N_c, 3)
    id: str

    def __post_init__(self):
        """Validação básica dos dados."""
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"Nuvem deve ter forma (N, 3), recebido {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("Nuvem de pontos não pode estar vazia")
        if not np.all(np.isfinite(pts)):
            raise ValueError(f"Nuvem {self.id!r} contém coordenadas não finitas")
        object.__setattr__(self, "points", _somente_leitura(pts))

    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    @property
    def esta_normalizada(self) -> bool:
        """Centroide na origem (1e-6) e norma máxima <= 1 + 1e-6"""
        centroide = self.points.mean(axis=0)
        raio = np.linalg.norm(self.points, axis=1).max()
        return bool(np.all(np.abs(centroide) <= 1e-6) and raio <= 1 + 1e-6)


@dataclass(frozen=True, eq=False)
class ViewImage:
    """Vista renderizada (RGB + profundidade) em um azimute da grade de 12 graus."""
    rgb: np.ndarray  # (H, W, 3) em [0, 1]
    depth: np.ndarray  # (H, W), 0 = fundo
    angle_index: int
    angle_deg: float
    source_id: str = ""

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        depth = np.asarray(self.depth, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"RGB deve ter forma (H, W, 3), recebido {rgb.shape}")
        if depth.shape != rgb.shape[:2]:
            raise ValueError("Grades de RGB e profundidade com dimensões diferentes")
        if depth.shape[0] < 8 or depth.shape[1] < 8:
            raise ValueError("Dimensões da vista devem ser >= 8")
        if not (0 <= self.angle_index < Configuracao.NUM_VISTAS_CANDIDATAS):
            raise ValueError(f"Índice angular fora de [0, 30): {self.angle_index}")
        if abs(self.angle_deg - Configuracao.angulo_da_vista(self.angle_index)) > 1e-9:
            raise ValueError("angle_deg deve ser 12 x angle_index")
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise ValueError("Profundidade deve ser finita e não negativa")
        if np.any(rgb < 0) or np.any(rgb > 1):
            raise ValueError("Valores RGB devem estar em [0, 1]")
        object.__setattr__(self, "rgb", _somente_leitura(rgb))
        object.__setattr__(self, "depth", _somente_leitura(depth))
        object.__setattr__(self, "angle_index", int(self.angle_index))

    @property
    def mean_depth(self) -> float:
        """Profundidade média das células ocupadas (0 para vista vazia)"""
        ocupadas = self.depth[self.depth > 0]
        return float(ocupadas.mean()) if ocupadas.size else 0.0


@dataclass(frozen=True, eq=False)
class CandidateViewSet:
    """Conjunto das 30 vistas candidatas, ordenado por índice angular."""
    views: Tuple[ViewImage, ...]

    def __post_init__(self):
        views = tuple(self.views)
        if len(views) != Configuracao.NUM_VISTAS_CANDIDATAS:
            raise ValueError(f"Conjunto candidato deve ter 30 vistas, recebido {len(views)}")
        indices = [v.angle_index for v in views]
        if indices != list(range(Configuracao.NUM_VISTAS_CANDIDATAS)):
            raise ValueError("Vistas candidatas devem cobrir os índices 0..29 em ordem")
        object.__setattr__(self, "views", views)

    def __getitem__(self, indice: int) -> ViewImage:
        return self.views[indice]

    def __len__(self) -> int:
        return len(self.views)


@dataclass(frozen=True)
class CategoryTree:
    """Árvore de categorias em dois níveis (pai -> subcategorias)."""
    parents: Tuple[str, ...]
    children: Dict[str, Tuple[str, ...]]
    parent_code: Dict[str, int] = field(default_factory=dict)
    sub_code: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        parents = tuple(self.parents)
        children = {p: tuple(self.children.get(p, ())) for p in parents}
        if set(self.children) - set(parents):
            raise ValueError("Filhos declarados para pai inexistente")
        dono: Dict[str, str] = {}
        for p in parents:
            if not p:
                raise ValueError("Nome de categoria pai não pode ser vazio")
            if not children[p]:
                raise ValueError(f"Categoria pai {p!r} sem subcategorias")
            for s in children[p]:
                if s in dono and dono[s] != p:
                    raise ValueError(f"Subcategoria {s!r} aparece sob {dono[s]!r} e {p!r}")
                dono[s] = p
        parent_code = {p: i for i, p in enumerate(parents)}
        subs = [s for p in parents for s in children[p]]
        if len(set(subs)) != len(subs):
            raise ValueError("Subcategoria repetida na árvore")
        sub_code = {s: i for i, s in enumerate(subs)}
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "children", children)
        object.__setattr__(self, "parent_code", parent_code)
        object.__setattr__(self, "sub_code", sub_code)
        object.__setattr__(self, "_pai_de", dono)

    @property
    def n_parents(self) -> int:
        return len(self.parents)

    @property
    def subcategorias(self) -> List[str]:
        """Subcategorias na ordem dos códigos"""
        return sorted(self.sub_code, key=self.sub_code.get)

    def parent_of(self, sub: str) -> str:
        try:
            return self._pai_de[sub]
        except KeyError:
            raise KeyError(f"Subcategoria desconhecida: {sub!r}") from None

    def contem(self, parent: str, sub: str) -> bool:
        return sub in self.children.get(parent, ())

    def to_dict(self) -> Dict[str, object]:
        return {"parents": list(self.parents),
                "children": {p: list(c) for p, c in self.children.items()}}

    @classmethod
    def from_dict(cls, dados: Dict[str, object]) -> "CategoryTree":
        return cls(parents=tuple(dados["parents"]),
                   children={p: tuple(c) for p, c in dict(dados["children"]).items()})


@dataclass(frozen=True, eq=False)
class TripletSample:
    """Unidade de treino: nuvem, vistas contínuas e par (pai, sub)."""
    cloud: PointCloud
    views: Tuple[ViewImage, ...]
    parent: str
    sub: str

    def __post_init__(self):
        views = tuple(self.views)
        if not (1 <= len(views) <= Configuracao.NUM_VISTAS_CANDIDATAS):
            raise ValueError(f"Número de vistas deve estar em [1, 30], recebido {len(views)}")
        object.__setattr__(self, "views", views)

    @property
    def angle_indices(self) -> List[int]:
        return [v.angle_index for v in self.views]

    def max_angle_gap(self) -> float:
        """Maior diferença angular circular entre pares de vistas"""
        angulos = [v.angle_deg for v in self.views]
        return max((circular_angle_difference(a, b)
                    for i, a in enumerate(angulos) for b in angulos[i + 1:]), default=0.0)

    def validar(self, tree: CategoryTree, omega_deg: Optional[float] = None) -> None:
        """Confere invariantes da tripla contra a árvore e a janela ω"""
        if not tree.contem(self.parent, self.sub):
            raise ValueError(f"{self.sub!r} não é filha de {self.parent!r} na árvore")
        if omega_deg is not None and len(self.views) > 1 and self.max_angle_gap() >= omega_deg:
            raise ValueError(f"Vistas de {self.cloud.id!r} excedem a janela ω={omega_deg}")

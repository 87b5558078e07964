"""
Sistema de exportação de resultados de execuções JM3D
para CSV, Excel, HTML interativo e JSON consolidado
Versão 1.0
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd
import plotly.graph_objects as go
import plotly.io as pio

from src.persistencia import read_jsonl, read_report
from src.settings import Logger
from src.visualizacao import figuras_da_execucao

Caminho = Union[str, Path]


class ExportSystem:
    """Exporta tabelas de métricas, relatórios e figuras de um diretório de execução"""

    def __init__(self, output_dir: Caminho = "exports"):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _destino(self, nome: str) -> Path:
        return self.output_dir / nome

    @staticmethod
    def _como_dataframe(dados: Union[Mapping, Sequence[Mapping], pd.DataFrame]) -> pd.DataFrame:
        if isinstance(dados, pd.DataFrame):
            return dados
        if isinstance(dados, Mapping):
            return pd.DataFrame([dados])
        if isinstance(dados, (list, tuple)):
            return pd.DataFrame(list(dados))
        raise ValueError("Dados devem ser dict, lista de dicts ou DataFrame")

    def export_to_csv(self, dados: Union[Mapping, Sequence[Mapping], pd.DataFrame],
                      nome: str = "dados.csv") -> Path:
        """
        Exporta dados para CSV

        Args:
            dados: Dicionário, lista de dicionários ou DataFrame
            nome: Nome do arquivo dentro de output_dir

        Returns:
            Path do arquivo criado
        """
        destino = self._destino(nome)
        self._como_dataframe(dados).to_csv(destino, index=False, encoding='utf-8-sig')
        return destino

    def export_to_excel(self, planilhas: Mapping[str, Union[Mapping, Sequence[Mapping], pd.DataFrame]],
                        nome: str = "relatorio.xlsx") -> Path:
        """
        Exporta para Excel com uma planilha por entrada

        Raises:
            ValueError: se nenhuma planilha for informada
        """
        if not planilhas:
            raise ValueError("Nenhuma planilha para exportar")
        destino = self._destino(nome)
        with pd.ExcelWriter(destino, engine='openpyxl') as writer:
            for aba, dados in planilhas.items():
                df = self._como_dataframe(dados)
                aba = aba[:31]
                df.to_excel(writer, sheet_name=aba, index=False)
                worksheet = writer.sheets[aba]
                for col_idx, coluna in enumerate(df.columns, start=1):
                    comprimentos = df[coluna].astype(str).map(len)
                    largura = max(comprimentos.max() if len(df) else 0, len(str(coluna)))
                    letra = worksheet.cell(row=1, column=col_idx).column_letter
                    worksheet.column_dimensions[letra].width = min(largura + 2, 50)
        return destino

    def export_plotly_to_html(self, fig: go.Figure, nome: str = "grafico.html",
                              include_plotlyjs: Union[bool, str] = True) -> Path:
        destino = self._destino(nome)
        pio.write_html(
            fig,
            file=destino,
            config={'responsive': True, 'displayModeBar': True, 'displaylogo': False},
            include_plotlyjs=include_plotlyjs,
            auto_open=False
        )
        return destino

    def export_run(self, diretorio: Caminho, incluir_html: bool = True) -> Dict[str, Path]:
        """
        Exporta uma execução completa: métricas por época (CSV), relatórios
        de avaliação e métricas da ponte (Excel), figuras (HTML) e um
        resumo JSON.

        Returns:
            dict: Caminhos de todos os arquivos exportados

        Raises:
            FileNotFoundError: se o diretório não for uma execução (sem config.json)
        """
        diretorio = Path(diretorio)
        if not (diretorio / "config.json").exists():
            raise FileNotFoundError(f"{diretorio} não contém config.json")

        metricas = carregar_metricas(diretorio)
        relatorios = carregar_relatorios(diretorio)
        metricas_ponte = _ler_se_existir(diretorio / "llm" / "metricas.jsonl")
        exportados: Dict[str, Path] = {}

        if metricas:
            exportados["metricas"] = self.export_to_csv(metricas, "metricas.csv")

        planilhas: Dict[str, Any] = {}
        if metricas:
            planilhas["Metricas"] = metricas
        linhas_split = [dict(nome=n, **{k: v for k, v in r.items() if k != "ranking"})
                        for n, r in relatorios.items() if "top1" in r]
        if linhas_split:
            planilhas["Zeroshot"] = linhas_split
        if "recuperacao" in relatorios:
            planilhas["Recuperacao"] = relatorios["recuperacao"]["ranking"]
        if metricas_ponte:
            planilhas["Ponte"] = metricas_ponte
        if planilhas:
            exportados["relatorio"] = self.export_to_excel(planilhas, "relatorio.xlsx")

        if incluir_html:
            for nome, fig in figuras_da_execucao(metricas, relatorios, metricas_ponte).items():
                exportados[f"grafico_{nome}"] = self.export_plotly_to_html(fig, f"{nome}.html")

        resumo = {
            "diretorio": str(diretorio),
            "epocas": len(metricas),
            "perda_final": metricas[-1]["total"] if metricas else None,
            "relatorios": {n: {k: r[k] for k in ("top1", "top5", "n") if k in r}
                           for n, r in relatorios.items()},
        }
        destino = self._destino("resumo.json")
        destino.write_text(json.dumps(resumo, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
                           encoding="utf-8")
        exportados["resumo"] = destino
        Logger.info(f"Exportados {len(exportados)} arquivos em {self.output_dir}")
        return exportados


def _ler_se_existir(caminho: Path) -> List[Dict[str, Any]]:
    return read_jsonl(caminho) if caminho.exists() else []


def carregar_metricas(diretorio: Caminho) -> List[Dict[str, Any]]:
    return _ler_se_existir(Path(diretorio) / "metricas.jsonl")


def carregar_relatorios(diretorio: Caminho) -> Dict[str, Dict[str, Any]]:
    """Relatórios de relatorios/*.json indexados pelo nome do arquivo"""
    pasta = Path(diretorio) / "relatorios"
    if not pasta.exists():
        return {}
    return {p.stem: read_report(p) for p in sorted(pasta.glob("*.json"))}


def exportar_execucao(diretorio: Caminho, destino: Optional[Caminho] = None) -> Dict[str, Path]:
    destino = Path(destino) if destino is not None else Path(diretorio) / "exportacao"
    return ExportSystem(destino).export_run(diretorio)
